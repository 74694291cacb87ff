#include "stylesplat/style.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace stylesplat {

namespace {

void check_map_matches(const GroupIdentityMap& ids, const FeatureMap& features, const char* what) {
  if (ids.height != features.height() || ids.width != features.width()) {
    throw ValidationError(std::string(what) + " group map is " + std::to_string(ids.height) + "x" +
                          std::to_string(ids.width) + " but its feature map is " + std::to_string(features.height()) +
                          "x" + std::to_string(features.width()) + " (downsample to the feature stride first)");
  }
}

int check_loss_inputs(const FeatureMap& query, std::span<const FeatureMap> keys, const GroupMatching& matching,
                      const GroupIdentityMap& query_ids, std::span<const GroupIdentityMap> key_ids) {
  if (keys.empty()) throw ValidationError("at least one key view is required");
  if (key_ids.size() != keys.size() || matching.views.size() != keys.size()) {
    throw ValidationError("key features, key group maps and matchings must have one entry per key view");
  }
  check_map_matches(query_ids, query, "query");
  for (std::size_t s = 0; s < keys.size(); ++s) {
    check_map_matches(key_ids[s], keys[s], "key view");
    if (keys[s].dim() != query.dim()) throw ValidationError("key and query feature dimensions differ");
    if (keys[s].stride != query.stride) throw ValidationError("key and query feature strides differ");
  }
  const int k = int(matching.views.front().target.size());
  for (const auto& v : matching.views) {
    if (int(v.target.size()) != k) throw ValidationError("matchings disagree on K");
  }
  for (int id : query_ids.ids) {
    if (id != kBackground && (id < 0 || id >= k)) throw ValidationError("query group id out of range");
  }
  bool any_target = false;
  for (const auto& ids : key_ids) {
    for (int id : ids.ids) {
      if (id != kBackground && (id < 0 || id >= k)) throw ValidationError("key group id out of range");
      any_target = any_target || id != kBackground;
    }
  }
  if (!any_target) throw DegenerateError("degenerate matching: every key-view group is empty");
  return k;
}

// Key features gathered per (view, group), plus the global (all non-background) set.
struct CandidateSets {
  struct Set {
    std::vector<int> cells;
    RowMatrix<double> features;
    Eigen::VectorXd norms;
  };
  std::vector<std::vector<Set>> by_group;  // [view][group]
  std::vector<Set> global;                 // [view]
};

CandidateSets::Set gather(const FeatureMap& key, std::vector<int> cells) {
  CandidateSets::Set set;
  set.features = key.features.data()(cells, Eigen::all);
  set.norms = set.features.rowwise().norm();
  set.cells = std::move(cells);
  return set;
}

CandidateSets build_candidates(std::span<const FeatureMap> keys, std::span<const GroupIdentityMap> key_ids, int k) {
  CandidateSets c;
  for (std::size_t s = 0; s < keys.size(); ++s) {
    std::vector<std::vector<int>> cells(k);
    std::vector<int> all;
    for (int p = 0; p < int(key_ids[s].ids.size()); ++p) {
      const int id = key_ids[s].ids[p];
      if (id == kBackground) continue;
      cells[id].push_back(p);
      all.push_back(p);
    }
    std::vector<CandidateSets::Set> sets;
    for (auto& g : cells) sets.push_back(gather(keys[s], std::move(g)));
    c.by_group.push_back(std::move(sets));
    c.global.push_back(gather(keys[s], std::move(all)));
  }
  return c;
}

}  // namespace

StyleLossResult instance_style_loss(const FeatureMap& query, std::span<const FeatureMap> keys,
                                    const GroupMatching& matching, const GroupIdentityMap& query_ids,
                                    std::span<const GroupIdentityMap> key_ids) {
  const int k = check_loss_inputs(query, keys, matching, query_ids, key_ids);
  const CandidateSets candidates = build_candidates(keys, key_ids, k);

  StyleLossResult result;
  StyleLossReport& rep = result.report;
  const Eigen::Index cells = query.features.pixel_count();
  rep.matched.assign(std::size_t(cells), FeatureMatch{});
  std::vector<double> distance(std::size_t(cells), 0.0);
  std::vector<double> group_sum(k, 0.0);
  std::vector<int> group_count(k, 0);

  for (Eigen::Index p = 0; p < cells; ++p) {
    const int id = query_ids.ids[std::size_t(p)];
    if (id == kBackground) continue;
    const auto q = query.features.data().row(p);
    const double qn = q.norm();
    double best = std::numeric_limits<double>::infinity();
    FeatureMatch match;
    for (std::size_t s = 0; s < keys.size(); ++s) {
      const int target = matching.views[s].target[id];
      const auto& set = target == ViewMatching::kGlobal ? candidates.global[s] : candidates.by_group[s][target];
      if (set.cells.empty()) continue;
      const Eigen::VectorXd dots = set.features * q.transpose();
      for (Eigen::Index c = 0; c < dots.size(); ++c) {
        const double d = 1.0 - dots[c] / std::max(qn * set.norms[c], kCosineEpsilon);
        if (d < best) {
          best = d;
          match = {int(s), set.cells[std::size_t(c)]};
        }
      }
    }
    if (match.view < 0) {
      throw DegenerateError("degenerate matching: group " + std::to_string(id) + " has no candidate key features");
    }
    rep.matched[std::size_t(p)] = match;
    distance[std::size_t(p)] = best;
    group_sum[id] += best;
    ++group_count[id];
    ++rep.n;
  }

  result.grad = Image(query.height(), query.width(), query.dim());
  double sum = 0.0;
  for (Eigen::Index p = 0; p < cells; ++p) {
    const FeatureMatch& m = rep.matched[std::size_t(p)];
    if (m.view < 0) continue;
    sum += distance[std::size_t(p)];
    result.grad.data().row(p) = cosine_distance_grad(query.features.data().row(p),
                                                     keys[std::size_t(m.view)].features.data().row(m.cell)) /
                                double(rep.n);
  }
  rep.total = rep.n > 0 ? sum / rep.n : 0.0;
  rep.per_group.resize(k);
  for (int g = 0; g < k; ++g) {
    if (group_count[g] > 0) rep.per_group[g] = group_sum[g] / group_count[g];
  }
  return result;
}

double nnfm_oracle(const FeatureMap& query, std::span<const FeatureMap> keys, const GroupMatching& matching,
                   const GroupIdentityMap& query_ids, std::span<const GroupIdentityMap> key_ids) {
  check_loss_inputs(query, keys, matching, query_ids, key_ids);
  double sum = 0.0;
  int n = 0;
  for (int r = 0; r < query.height(); ++r) {
    for (int c = 0; c < query.width(); ++c) {
      const int id = query_ids.at(r, c);
      if (id == kBackground) continue;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < keys.size(); ++s) {
        const int target = matching.views[s].target[id];
        for (int r2 = 0; r2 < keys[s].height(); ++r2) {
          for (int c2 = 0; c2 < keys[s].width(); ++c2) {
            const int key_id = key_ids[s].at(r2, c2);
            const bool member = target == ViewMatching::kGlobal ? key_id != kBackground : key_id == target;
            if (!member) continue;
            double dot = 0.0, aa = 0.0, bb = 0.0;
            for (int j = 0; j < query.dim(); ++j) {
              const double a = query.features(r, c, j), b = keys[s].features(r2, c2, j);
              dot += a * b;
              aa += a * a;
              bb += b * b;
            }
            const double d = 1.0 - dot / std::max(std::sqrt(aa) * std::sqrt(bb), kCosineEpsilon);
            best = std::min(best, d);
          }
        }
      }
      if (!std::isfinite(best)) throw DegenerateError("degenerate matching: empty candidate set");
      sum += best;
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0;
}

StyleLossResult style_loss_fixed_matches(const FeatureMap& query, std::span<const FeatureMap> keys,
                                         const std::vector<FeatureMatch>& matched) {
  if (Eigen::Index(matched.size()) != query.features.pixel_count()) {
    throw ValidationError("one match entry per query cell is required");
  }
  StyleLossResult result;
  result.report.matched = matched;
  result.grad = Image(query.height(), query.width(), query.dim());
  int n = 0;
  for (const auto& m : matched) n += m.view >= 0 ? 1 : 0;
  double sum = 0.0;
  for (std::size_t p = 0; p < matched.size(); ++p) {
    const FeatureMatch& m = matched[p];
    if (m.view < 0) continue;
    const auto a = query.features.data().row(Eigen::Index(p));
    const auto b = keys[std::size_t(m.view)].features.data().row(m.cell);
    sum += cosine_distance(a, b);
    result.grad.data().row(Eigen::Index(p)) = cosine_distance_grad(a, b) / double(n);
  }
  result.report.n = n;
  result.report.total = n > 0 ? sum / n : 0.0;
  return result;
}

std::vector<int> select_key_views(std::span<const Camera> cameras, int k) {
  const int n = int(cameras.size());
  if (k < 1 || k > n) {
    throw ValidationError("key view count " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  std::vector<int> selected{0};
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (int(selected.size()) < k) {
    const Vec3& last = cameras[std::size_t(selected.back())].position;
    for (int i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], (cameras[std::size_t(i)].position - last).norm());
    int best = -1;
    for (int i = 0; i < n; ++i) {
      if (std::find(selected.begin(), selected.end(), i) != selected.end()) continue;
      if (best < 0 || nearest[i] > nearest[best]) best = i;
    }
    selected.push_back(best);
  }
  return selected;
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

TransferMode parse_transfer_mode(std::string_view name) {
  if (name == "ist") return TransferMode::ist;
  if (name == "direct") return TransferMode::direct;
  throw ConfigError("unknown transfer mode '" + std::string(name) + "'");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }
std::string to_string(TransferMode mode) { return mode == TransferMode::ist ? "ist" : "direct"; }

void TransferConfig::validate() const {
  if (iterations < 0) throw ValidationError("iterations must be >= 0");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ValidationError("step size must be positive");
  if (!(lambda_style >= 0.0) || !(lambda_content >= 0.0)) throw ValidationError("loss weights must be >= 0");
  if (batch < 1) throw ValidationError("batch must be >= 1");
  if (workers < 1) throw ValidationError("workers must be >= 1");
}

namespace {

// Adam / plain gradient steps on an N x 3 color block.
class ColorOptimizer {
 public:
  ColorOptimizer(OptimizerKind kind, double lr, Eigen::Index n)
      : kind_(kind), lr_(lr), m_(RowMatrix<double>::Zero(n, 3)), v_(RowMatrix<double>::Zero(n, 3)) {}

  void step(RowMatrix<double>& colors, const RowMatrix<double>& grad) {
    if (kind_ == OptimizerKind::sgd) {
      colors -= lr_ * grad;
    } else {
      constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      ++t_;
      m_ = b1 * m_ + (1.0 - b1) * grad;
      v_ = b2 * v_ + (1.0 - b2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
      colors.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
    }
    colors = colors.cwiseMax(0.0).cwiseMin(1.0);
  }

 private:
  OptimizerKind kind_;
  double lr_;
  int t_ = 0;
  RowMatrix<double> m_, v_;
};

RowMatrix<double> colors_of(const GaussianScene& scene) {
  RowMatrix<double> c(Eigen::Index(scene.gaussians.size()), 3);
  for (std::size_t i = 0; i < scene.gaussians.size(); ++i) c.row(Eigen::Index(i)) = scene.gaussians[i].color.transpose();
  return c;
}

void set_colors(GaussianScene& scene, const RowMatrix<double>& c) {
  for (std::size_t i = 0; i < scene.gaussians.size(); ++i) scene.gaussians[i].color = c.row(Eigen::Index(i)).transpose();
}

struct KeyContext {
  std::vector<FeatureMap> features;
  std::vector<GroupIdentityMap> ids;
  std::vector<GroupSet> sets;
};

KeyContext key_context(const GaussianScene& scene, std::span<const KeyView> key_views, const FeatureExtractor& fx,
                       const IdentityClassifier& clf, int workers) {
  KeyContext ctx;
  RenderOptions opts;
  opts.workers = workers;
  for (std::size_t s = 0; s < key_views.size(); ++s) {
    const KeyView& kv = key_views[s];
    if (kv.stylized.height() != kv.camera.height || kv.stylized.width() != kv.camera.width ||
        kv.stylized.channels() != 3) {
      throw ValidationError("key view " + std::to_string(s) + " image does not match its camera resolution");
    }
    ctx.features.push_back(fx.extract(kv.stylized, "key" + std::to_string(s)));
    ctx.ids.push_back(downsample_group_map(render_identity_map(scene, kv.camera, clf, opts), fx.stride()));
    ctx.sets.push_back(build_group_sets(ctx.ids.back(), clf.groups()));
  }
  return ctx;
}

}  // namespace

double mean_style_loss(const GaussianScene& scene, std::span<const KeyView> key_views, std::span<const Camera> cams,
                       const FeatureExtractor& fx, const IdentityClassifier& clf, int workers) {
  if (cams.empty()) throw ValidationError("need at least one camera");
  const KeyContext keys = key_context(scene, key_views, fx, clf, workers);
  RenderOptions opts;
  opts.workers = workers;
  double sum = 0.0;
  for (const Camera& cam : cams) {
    const RenderOutput out = render(scene, cam, opts);
    const FeatureMap f = fx.extract(out.color);
    const GroupIdentityMap ids = downsample_group_map(classify_identity(out.id_features, clf, out.coverage), fx.stride());
    const GroupMatching m = match_groups(build_group_sets(ids, clf.groups()), keys.sets);
    sum += instance_style_loss(f, keys.features, m, ids, keys.ids).report.total;
  }
  return sum / double(cams.size());
}

TransferResult optimize_scene(const GaussianScene& scene, std::span<const KeyView> key_views,
                              std::span<const Camera> train_cams, const TransferConfig& cfg,
                              const FeatureExtractor& fx, const IdentityClassifier& clf) {
  cfg.validate();
  require_valid(scene);
  if (key_views.empty()) throw ValidationError("at least one key view is required");
  if (clf.groups() != scene.n_groups) throw ValidationError("classifier K does not match the scene's group count");
  TransferResult result{scene, {}};
  if (cfg.iterations == 0) return result;

  RenderOptions opts;
  opts.workers = cfg.workers;
  const KeyContext keys = key_context(scene, key_views, fx, clf, cfg.workers);

  const bool ist = cfg.mode == TransferMode::ist;
  const int n_cams = ist ? int(train_cams.size()) : int(key_views.size());
  if (n_cams == 0) throw ValidationError("at least one training camera is required");

  // Geometry is frozen, so identity maps and the content targets are fixed per camera.
  std::vector<GroupIdentityMap> train_ids;
  std::vector<GroupMatching> train_matching;
  std::vector<FeatureMap> content_targets;
  if (ist) {
    for (const Camera& cam : train_cams) {
      const RenderOutput out = render(scene, cam, opts);
      train_ids.push_back(
          downsample_group_map(classify_identity(out.id_features, clf, out.coverage, "train"), fx.stride()));
      train_matching.push_back(match_groups(build_group_sets(train_ids.back(), clf.groups()), keys.sets));
      content_targets.push_back(fx.extract(out.color, "content"));
    }
  }

  RowMatrix<double> colors = colors_of(scene);
  ColorOptimizer optimizer(cfg.optimizer, cfg.step_size, colors.rows());
  const int start = int(cfg.seed % std::uint64_t(n_cams));

  for (int it = 0; it < cfg.iterations; ++it) {
    RowMatrix<double> grad = RowMatrix<double>::Zero(colors.rows(), 3);
    LossRecord rec;
    rec.iteration = it;
    for (int b = 0; b < cfg.batch; ++b) {
      const int cam_index = int((std::int64_t(start) + std::int64_t(it) * cfg.batch + b) % n_cams);
      if (b == 0) rec.camera = cam_index;
      Image upstream;
      if (ist) {
        const Camera& cam = train_cams[std::size_t(cam_index)];
        const RenderOutput out = render(result.scene, cam, opts);
        const FeatureExtractor::Trace trace = fx.forward(out.color);
        const StyleLossResult sl = instance_style_loss(trace.map, keys.features, train_matching[cam_index],
                                                       train_ids[cam_index], keys.ids);
        const RowMatrix<double> diff = trace.map.features.data() - content_targets[cam_index].features.data();
        const double content = diff.squaredNorm() / double(diff.size());
        Image grad_features = sl.grad;
        grad_features.data() = cfg.lambda_style * sl.grad.data() + (cfg.lambda_content * 2.0 / double(diff.size())) * diff;
        upstream = fx.backward(trace, grad_features);
        rec.style_loss += sl.report.total / cfg.batch;
        rec.content_loss += content / cfg.batch;
      } else {
        const KeyView& kv = key_views[std::size_t(cam_index)];
        const RenderOutput out = render(result.scene, kv.camera, opts);
        const RowMatrix<double> diff = out.color.data() - kv.stylized.data();
        upstream = Image(out.color.height(), out.color.width(), (2.0 / double(diff.size())) * diff);
        rec.style_loss += diff.squaredNorm() / double(diff.size()) / cfg.batch;
      }
      grad += render_backward(result.scene, ist ? train_cams[std::size_t(cam_index)] : key_views[std::size_t(cam_index)].camera,
                              upstream, opts)
                  .color /
              double(cfg.batch);
    }
    rec.total = ist ? cfg.lambda_style * rec.style_loss + cfg.lambda_content * rec.content_loss : rec.style_loss;
    if (!std::isfinite(rec.total) || !grad.allFinite()) {
      throw NumericError("non-finite loss at iteration " + std::to_string(it));
    }
    result.trace.push_back(rec);
    optimizer.step(colors, grad);
    set_colors(result.scene, colors);
  }
  return result;
}

double trace_decrease(const std::vector<LossRecord>& trace) {
  if (trace.size() < 2) return 0.0;
  const LossRecord& first = trace.front();
  const LossRecord* last = &trace.back();
  for (auto it = trace.rbegin(); it != trace.rend() - 1; ++it) {
    if (it->camera == first.camera) {
      last = &*it;
      break;
    }
  }
  if (!(first.total > 0.0)) return 0.0;
  return (first.total - last->total) / first.total;
}

std::string trace_csv(const std::vector<LossRecord>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "iteration,style_loss,content_loss,total\n";
  for (const auto& r : trace) os << r.iteration << ',' << r.style_loss << ',' << r.content_loss << ',' << r.total << '\n';
  return os.str();
}

}  // namespace stylesplat
