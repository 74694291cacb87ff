#include "stylesplat/selftest.hpp"

#include "stylesplat/oracles.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace stylesplat::check {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

double max_abs_diff(const Image& a, const Image& b) {
  if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
  if (a.empty()) return 0.0;
  return (a.data() - b.data()).cwiseAbs().maxCoeff();
}

Image random_image(int h, int w, int c, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Image img(h, w, c);
  for (Eigen::Index i = 0; i < img.data().size(); ++i) img.data().data()[i] = rng.uniform(lo, hi);
  return img;
}

Image depth_ramp(int h, int w) {
  Image d(h, w, 1);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) d(r, c, 0) = 2.0 + 0.02 * r + 0.01 * c;
  }
  return d;
}

GroupIdentityMap random_group_map(int h, int w, int k, double background, const std::vector<bool>& present, Rng& rng) {
  GroupIdentityMap m;
  m.height = h;
  m.width = w;
  std::vector<int> allowed;
  for (int g = 0; g < k; ++g) {
    if (present[std::size_t(g)]) allowed.push_back(g);
  }
  for (int p = 0; p < h * w; ++p) {
    const bool bg = allowed.empty() || rng.uniform() < background;
    m.ids.push_back(bg ? kBackground : allowed[std::size_t(rng.below(int(allowed.size())))]);
  }
  return m;
}

FeatureMap as_feature_map(Image img) { return FeatureMap{std::move(img), 4, {}}; }

}  // namespace

CheckResult render_oracle(int scenes, int max_gaussians, int size, std::uint64_t seed, double time_limit_s) {
  const auto t0 = Clock::now();
  const char* presets[] = {"blocks", "plane", "orbit-clutter"};
  Rng rng(seed);
  double worst = 0.0;
  RenderOptions opts;
  opts.falloff_cutoff = false;
  for (int s = 0; s < scenes; ++s) {
    const int n = std::max(1, max_gaussians - rng.below(std::max(1, max_gaussians / 2)));
    const int k = 1 + rng.below(6);
    const GaussianScene scene = make_scene(presets[s % 3], n, std::min(k, n), derive_seed(seed, std::to_string(s)));
    const double angle = rng.uniform(0.0, 6.283185307179586);
    const Camera cam = look_at(Vec3(3.5 * std::cos(angle), rng.uniform(0.5, 2.5), 3.5 * std::sin(angle)),
                               Vec3::Zero(), Vec3(0, 1, 0), rng.uniform(40.0, 70.0), size, size);
    const RenderOutput fast = render(scene, cam, opts);
    const RenderOutput ref = oracle::brute_force_render(scene, cam);
    for (double e : {max_abs_diff(fast.color, ref.color), max_abs_diff(fast.depth, ref.depth),
                     max_abs_diff(fast.id_features, ref.id_features), max_abs_diff(fast.coverage, ref.coverage)}) {
      worst = std::max(worst, e);
    }
  }
  const double secs = seconds_since(t0);
  return {"render oracle equivalence", worst < 1e-6 && secs < time_limit_s,
          std::to_string(scenes) + " scenes, max error " + fmt(worst) + ", " + fmt(secs) + " s", secs};
}

CheckResult ddim_algebra(int steps, int size, std::uint64_t seed, double roundtrip_bound) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  const DDIMSchedule sch = make_schedule(steps, 1e-4, 0.02);
  const Image z0 = random_image(size, size, 3, rng);
  StyleConditioning cond;
  cond.depth = depth_ramp(size, size);

  const LatentState zt = ddim_invert({z0, 0}, ZeroDenoiser(), sch, cond);
  Image expected = z0;
  expected.data() *= std::sqrt(sch.alpha_bar[steps]);
  const double telescoping = max_abs_diff(zt.z, expected);
  const double zero_back = max_abs_diff(ddim_denoise(zt, ZeroDenoiser(), sch, cond).z, z0);

  const ConstantDenoiser constant(0.3);
  const double const_trip = max_abs_diff(ddim_denoise(ddim_invert({z0, 0}, constant, sch, cond), constant, sch, cond).z, z0);

  ToyUNet::Config cfg;
  cfg.seed = derive_seed(seed, "denoiser");
  const ToyUNet unet(cfg);
  const double toy_trip = max_abs_diff(ddim_denoise(ddim_invert({z0, 0}, unet, sch, cond), unet, sch, cond).z, z0);

  const bool ok = telescoping < 1e-10 && zero_back < 1e-10 && const_trip < 1e-10 && toy_trip < roundtrip_bound;
  return {"DDIM algebra", ok,
          "zero-eps " + fmt(std::max(telescoping, zero_back)) + ", constant-eps " + fmt(const_trip) + ", seeded T=" +
              std::to_string(steps) + " roundtrip " + fmt(toy_trip) + " (bound " + fmt(roundtrip_bound) + ")",
          seconds_since(t0)};
}

CheckResult attention_reductions(int size, int steps, std::uint64_t seed) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  const AttentionBlock blk = AttentionBlock::random(12, 8, rng);
  const Image z = random_image(size, size, 12, rng, -1.0, 1.0);
  const bool k1 = cross_view_attention(blk, z.data(), z.data()) == self_attention(blk, z.data());

  RowMatrix<double> doubled(2 * z.pixel_count(), 12);
  doubled << z.data(), z.data();
  const Image other = random_image(size, size, 12, rng, -1.0, 1.0);
  RowMatrix<double> pair(2 * z.pixel_count(), 12), pair_dup(4 * z.pixel_count(), 12);
  pair << z.data(), other.data();
  pair_dup << z.data(), other.data(), other.data(), z.data();
  const double dup = std::max((cross_view_attention(blk, z.data(), doubled) - self_attention(blk, z.data())).cwiseAbs().maxCoeff(),
                              (cross_view_attention(blk, z.data(), pair_dup) - cross_view_attention(blk, z.data(), pair))
                                  .cwiseAbs()
                                  .maxCoeff());

  ToyUNet::Config cfg;
  cfg.seed = derive_seed(seed, "denoiser");
  cfg.cvsa_block = AttentionSlot::none;
  const ToyUNet unet(cfg);
  const DDIMSchedule sch = make_schedule(steps, 1e-4, 0.02);
  const StyleEmbedding style = style_embedding(random_image(8, 8, 3, rng));
  std::vector<Image> views, depths;
  for (int v = 0; v < 3; ++v) {
    views.push_back(random_image(size, size, 3, rng));
    depths.push_back(depth_ramp(size, size));
  }
  const std::vector<Image> joint = stylize_key_views(views, depths, style, unet, sch);
  bool independent = true;
  for (int v = 0; v < 3; ++v) {
    independent = independent && stylize_key_views({views[v]}, {depths[v]}, style, unet, sch).front() == joint[v];
  }
  return {"attention reductions", k1 && dup < 1e-6 && independent,
          std::string("K=1 bitwise ") + (k1 ? "yes" : "no") + ", duplicated views " + fmt(dup) +
              ", cvsa none independent " + (independent ? "yes" : "no"),
          seconds_since(t0)};
}

CheckResult group_matching_exhaustive() {
  const auto t0 = Clock::now();
  constexpr int k = 3;
  int cases = 0, correct = 0;
  auto make_set = [](unsigned pattern) {
    GroupSet s;
    s.height = 2;
    s.width = 2;
    s.groups.assign(k, {});
    for (int g = 0; g < k; ++g) {
      if (pattern >> g & 1u) s.groups[g].push_back({g / 2, g % 2});
    }
    return s;
  };
  for (unsigned xp = 0; xp < 8; ++xp) {
    for (unsigned yp = 0; yp < 8; ++yp) {
      const ViewMatching m = match_groups(make_set(xp), make_set(yp));
      for (int i = 0; i < k; ++i) {
        ++cases;
        const int expected = (yp >> i & 1u) ? i : ViewMatching::kGlobal;
        correct += m.target[i] == expected ? 1 : 0;
      }
    }
  }
  return {"group matching", correct == cases, std::to_string(correct) + "/" + std::to_string(cases) + " cases",
          seconds_since(t0)};
}

CheckResult ist_oracle(int instances, std::uint64_t seed) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  double worst = 0.0, worst_k1 = 0.0;
  for (int it = 0; it < instances; ++it) {
    const int h = 1 + rng.below(32), w = 1 + rng.below(32), dim = 1 + rng.below(16);
    const int k = 1 + rng.below(4), views = 1 + rng.below(3);
    auto presence = [&] {
      std::vector<bool> p(k);
      for (int g = 0; g < k; ++g) p[g] = rng.uniform() < 0.7;
      return p;
    };
    const FeatureMap query = as_feature_map(random_image(h, w, dim, rng, -1.0, 1.0));
    const GroupIdentityMap qids = random_group_map(h, w, k, 0.2, presence(), rng);
    std::vector<FeatureMap> keys;
    std::vector<GroupIdentityMap> kids;
    std::vector<GroupSet> ksets;
    for (int v = 0; v < views; ++v) {
      const int kh = 1 + rng.below(32), kw = 1 + rng.below(32);
      keys.push_back(as_feature_map(random_image(kh, kw, dim, rng, -1.0, 1.0)));
      std::vector<bool> p = presence();
      p[std::size_t(rng.below(k))] = true;  // every key view has some foreground
      GroupIdentityMap m = random_group_map(kh, kw, k, 0.2, p, rng);
      m.ids[0] = int(std::find(p.begin(), p.end(), true) - p.begin());
      kids.push_back(m);
      ksets.push_back(build_group_sets(m, k));
    }
    const GroupMatching matching = match_groups(build_group_sets(qids, k), ksets);
    const double fast = instance_style_loss(query, keys, matching, qids, kids).report.total;
    worst = std::max(worst, std::abs(fast - nnfm_oracle(query, keys, matching, qids, kids)));

    // Collapse every identity into one group: the loss reduces to global NNFM.
    GroupIdentityMap q1 = qids;
    for (int& id : q1.ids) id = id == kBackground ? kBackground : 0;
    std::vector<GroupIdentityMap> k1 = kids;
    std::vector<GroupSet> s1;
    for (auto& m : k1) {
      for (int& id : m.ids) id = id == kBackground ? kBackground : 0;
      s1.push_back(build_group_sets(m, 1));
    }
    const double reduced =
        instance_style_loss(query, keys, match_groups(build_group_sets(q1, 1), s1), q1, k1).report.total;
    worst_k1 = std::max(worst_k1, std::abs(reduced - oracle::global_nnfm(query, keys, q1, k1)));
  }
  return {"IST loss oracle", worst < 1e-6 && worst_k1 < 1e-6,
          std::to_string(instances) + " instances, max error " + fmt(worst) + ", K=1 vs global " + fmt(worst_k1),
          seconds_since(t0)};
}

CheckResult gradient_check(int samples, std::uint64_t seed) {
  const auto t0 = Clock::now();
  const int size = 32;
  const GaussianScene scene = make_scene("blocks", 120, 3, seed);
  const std::vector<Camera> cams = orbit_cameras(4, 4.0, 1.5, 50.0, size, size);
  const Camera& cam = cams[1];
  const FeatureExtractor fx(derive_seed(seed, "features"));
  const IdentityClassifier clf = IdentityClassifier::identity_embedding(scene.n_groups);
  const double lambda_style = 1.0, lambda_content = 0.05;

  const std::vector<FeatureMap> keys{fx.extract(builtin_style("builtin:waves", size, size, seed))};
  const std::vector<GroupIdentityMap> key_ids{downsample_group_map(render_identity_map(scene, cams[0], clf), fx.stride())};
  const RenderOutput base = render(scene, cam);
  const GroupIdentityMap ids = downsample_group_map(classify_identity(base.id_features, clf, base.coverage), fx.stride());
  const GroupMatching matching = match_groups(build_group_sets(ids, clf.groups()), std::vector<GroupSet>{build_group_sets(key_ids[0], clf.groups())});
  const FeatureMap content = fx.extract(base.color);
  const std::vector<FeatureMatch> frozen = instance_style_loss(content, keys, matching, ids, key_ids).report.matched;

  auto loss_and_grad = [&](const GaussianScene& s, RowMatrix<double>* grad) {
    const RenderOutput out = render(s, cam);
    const FeatureExtractor::Trace trace = fx.forward(out.color);
    const StyleLossResult sl = style_loss_fixed_matches(trace.map, keys, frozen);
    const RowMatrix<double> diff = trace.map.features.data() - content.features.data();
    const double n = double(diff.size());
    if (grad) {
      Image g = sl.grad;
      g.data() = lambda_style * sl.grad.data() + (lambda_content * 2.0 / n) * diff;
      *grad = render_backward(s, cam, fx.backward(trace, g)).color;
    }
    return lambda_style * sl.report.total + lambda_content * diff.squaredNorm() / n;
  };

  RowMatrix<double> analytic;
  loss_and_grad(scene, &analytic);
  std::vector<int> visible;
  for (int i = 0; i < int(analytic.rows()); ++i) {
    if (analytic.row(i).norm() > 1e-7) visible.push_back(i);
  }
  Rng rng(derive_seed(seed, "gradient"));
  double worst = 0.0;
  int checked = 0;
  for (int s = 0; s < samples && !visible.empty(); ++s) {
    const int gi = visible[std::size_t(rng.below(int(visible.size())))];
    Eigen::Vector3d numeric;
    for (int ch = 0; ch < 3; ++ch) {
      auto f = [&](const Eigen::VectorXd& x) {
        GaussianScene p = scene;
        p.gaussians[std::size_t(gi)].color = x;
        return loss_and_grad(p, nullptr);
      };
      numeric[ch] = oracle::central_difference(f, Eigen::VectorXd(scene.gaussians[std::size_t(gi)].color), ch, 1e-6);
    }
    const Eigen::Vector3d a = analytic.row(gi).transpose();
    worst = std::max(worst, (a - numeric).norm() / std::max({a.norm(), numeric.norm(), 1e-12}));
    ++checked;
  }
  return {"end-to-end gradient", checked == samples && worst < 1e-2,
          std::to_string(checked) + " Gaussians, max relative error " + fmt(worst), seconds_since(t0)};
}

CheckResult consistency_soundness(const GaussianScene& scene, const std::vector<Camera>& cams, const std::string& label,
                                  double bound) {
  const auto t0 = Clock::now();
  const FeatureExtractor fx(1);
  const ConsistencyReport rep = consistency_report(scene, cams, fx);
  const bool ok = rep.short_range.pairs > 0 && rep.short_range.rmse < bound;
  return {"consistency soundness (" + label + ")", ok,
          "short-range rmse " + fmt(rep.short_range.rmse) + " over " + std::to_string(rep.short_range.pairs) +
              " pairs, long-range " + fmt(rep.long_range.rmse),
          seconds_since(t0)};
}

CheckResult stylization_run(const PipelineResult& run, const GaussianScene& styled, double seconds, double time_limit_s,
                            double max_ratio) {
  const double initial = run.report["ist_loss"]["initial"].get<double>();
  const double final_loss = run.report["ist_loss"]["final"].get<double>();
  const bool valid = validate_scene(styled).empty();
  const bool ok = seconds < time_limit_s && final_loss <= max_ratio * initial && valid;
  return {"desk-scale stylization", ok,
          "style loss " + fmt(initial) + " -> " + fmt(final_loss) + " (ratio " + fmt(final_loss / initial) + "), " +
              fmt(seconds) + " s, scene " + (valid ? "valid" : "invalid"),
          seconds};
}

CheckResult ablation(const json& rep, const std::filesystem::path& dir, double min_decrease) {
  bool ok = rep.contains("runs") && rep["runs"].size() == 4;
  std::string detail;
  for (const auto& r : rep.value("runs", json::array())) {
    const double dec = r["trace_decrease"].get<double>();
    const std::string name = r["name"].get<std::string>();
    ok = ok && dec >= min_decrease && std::filesystem::exists(dir / name / "manifest.json");
    detail += name + " " + fmt(100.0 * dec) + "%, ";
  }
  ok = ok && rep.contains("cvsa_comparison") && rep["cvsa_comparison"].contains("ordering") &&
       rep.contains("ist_vs_direct") && rep["ist_vs_direct"].contains("ordering");
  if (ok) {
    detail += "cvsa " + rep["cvsa_comparison"]["ordering"].get<std::string>() + ", " +
              rep["ist_vs_direct"]["ordering"].get<std::string>();
  }
  return {"ablation harness", ok, detail, 0.0};
}

CheckResult determinism(const json& a, const json& b) {
  const bool ok = a.dump() == b.dump() && !a["files"].empty();
  return {"determinism", ok, std::to_string(a["files"].size()) + " files, manifests " + (ok ? "identical" : "differ"),
          0.0};
}

std::vector<CheckResult> run_selftest(const std::filesystem::path& scratch, int workers) {
  std::vector<CheckResult> out;
  out.push_back(render_oracle(3, 150, 32, 11, 60.0));
  out.push_back(ddim_algebra(20, 32, 12, 0.05));
  out.push_back(attention_reductions(16, 5, 13));
  out.push_back(group_matching_exhaustive());
  out.push_back(ist_oracle(10, 14));
  out.push_back(gradient_check(3, 15));

  RunConfig cfg;
  cfg.merge({{"gaussians", 200}, {"width", 48}, {"height", 48}, {"cameras", 8}, {"steps", 10}, {"iters", 60},
             {"workers", workers}});
  const auto t0 = Clock::now();
  const PipelineResult a = run_pipeline(cfg, scratch / "run_a");
  const double secs = seconds_since(t0);
  const GaussianScene styled = load_scene(scratch / "run_a" / "styled_scene.json");
  out.push_back(stylization_run(a, styled, secs, 300.0, 1.0));
  out.push_back(consistency_soundness(styled, cfg.cameras(), "stylized", 0.05));
  const PipelineResult b = run_pipeline(cfg, scratch / "run_b");
  out.push_back(determinism(a.manifest, b.manifest));
  return out;
}

}  // namespace stylesplat::check
