#include "stylesplat/io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace stylesplat {

namespace {

template <int N>
json vec_json(const Eigen::Matrix<double, N, 1>& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

template <int N>
Eigen::Matrix<double, N, 1> vec_from(const json& j, const char* key) {
  const json& a = j.at(key);
  if (!a.is_array() || int(a.size()) != N) {
    throw ValidationError(std::string("field '") + key + "' must be an array of " + std::to_string(N) + " numbers");
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = a[i].get<double>();
  return v;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

unsigned char to_byte(double v) {
  if (!std::isfinite(v)) v = 0.0;
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_png_rows(const std::filesystem::path& path, int height, int width, int color_type,
                    const std::vector<unsigned char>& bytes, int row_stride,
                    const std::vector<png_color>* palette) {
  auto f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to write PNG '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  if (palette) png_set_PLTE(png, info, palette->data(), int(palette->size()));
  png_write_info(png, info);
  for (int r = 0; r < height; ++r) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() + std::size_t(r) * row_stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads an 8-bit PNG; when `expand` is set, converts to RGB, otherwise keeps raw indices.
std::vector<unsigned char> read_png_bytes(const std::filesystem::path& path, bool expand, int& height, int& width,
                                          int& channels) {
  auto f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to read PNG '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (expand) {
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (depth < 8) png_set_expand(png);
    png_set_strip_alpha(png);
  } else if (depth < 8) {
    png_set_packing(png);
  }
  png_read_update_info(png, info);
  width = int(png_get_image_width(png, info));
  height = int(png_get_image_height(png, info));
  channels = int(png_get_channels(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  std::vector<unsigned char> bytes(stride * height);
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r) rows[r] = bytes.data() + r * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return bytes;
}

}  // namespace

json to_json(const GaussianScene& scene) {
  json gs = json::array();
  for (const auto& g : scene.gaussians) {
    gs.push_back({{"mu", vec_json<3>(g.mu)},
                  {"scale", vec_json<3>(g.scale)},
                  {"rot", vec_json<4>(g.rot)},
                  {"opacity", g.opacity},
                  {"color", vec_json<3>(g.color)},
                  {"id_enc", vec_json<kIdDim>(g.id_enc)}});
  }
  return {{"seed", scene.seed},
          {"n_groups", scene.n_groups},
          {"background", vec_json<3>(scene.background)},
          {"gaussians", std::move(gs)}};
}

GaussianScene scene_from_json(const json& j) {
  try {
    GaussianScene scene;
    scene.seed = j.at("seed").get<std::uint64_t>();
    scene.n_groups = j.at("n_groups").get<int>();
    scene.background = vec_from<3>(j, "background");
    for (const auto& jg : j.at("gaussians")) {
      Gaussian g;
      g.mu = vec_from<3>(jg, "mu");
      g.scale = vec_from<3>(jg, "scale");
      g.rot = vec_from<4>(jg, "rot");
      g.opacity = jg.at("opacity").get<double>();
      g.color = vec_from<3>(jg, "color");
      g.id_enc = vec_from<kIdDim>(jg, "id_enc");
      scene.gaussians.push_back(g);
    }
    return scene;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed scene JSON: ") + e.what());
  }
}

json to_json(const Camera& cam) {
  return {{"position", vec_json<3>(cam.position)},
          {"rot", vec_json<4>(cam.rot)},
          {"fov_y", cam.fov_y},
          {"width", cam.width},
          {"height", cam.height},
          {"near", cam.near},
          {"far", cam.far}};
}

Camera camera_from_json(const json& j) {
  try {
    Camera cam;
    cam.position = vec_from<3>(j, "position");
    cam.rot = vec_from<4>(j, "rot");
    cam.fov_y = j.at("fov_y").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    cam.near = j.at("near").get<double>();
    cam.far = j.at("far").get<double>();
    return cam;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed camera JSON: ") + e.what());
  }
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("cannot parse JSON '" + path.string() + "': " + e.what());
  }
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const json& j, const std::filesystem::path& path) { write_text(j.dump(2) + "\n", path); }

void save_scene(const GaussianScene& scene, const std::filesystem::path& path) { write_json(to_json(scene), path); }

GaussianScene load_scene(const std::filesystem::path& path) { return scene_from_json(read_json(path)); }

void save_cameras(const std::vector<Camera>& cams, const std::filesystem::path& path) {
  json a = json::array();
  for (const auto& c : cams) a.push_back(to_json(c));
  write_json(a, path);
}

std::vector<Camera> load_cameras(const std::filesystem::path& path) {
  const json j = read_json(path);
  std::vector<Camera> cams;
  if (j.is_array()) {
    for (const auto& c : j) cams.push_back(camera_from_json(c));
  } else if (j.is_object() && j.contains("cameras")) {
    for (const auto& c : j.at("cameras")) cams.push_back(camera_from_json(c));
  } else {
    cams.push_back(camera_from_json(j));
  }
  return cams;
}

Image quantize8(const Image& img) {
  Image out = img;
  out.data() = img.data().unaryExpr([](double v) { return to_byte(v) / 255.0; });
  return out;
}

void write_png(const Image& rgb, const std::filesystem::path& path) {
  if (rgb.channels() != 3) throw ValidationError("write_png expects a 3-channel image");
  std::vector<unsigned char> bytes(std::size_t(rgb.pixel_count()) * 3);
  for (Eigen::Index i = 0; i < rgb.pixel_count(); ++i) {
    for (int k = 0; k < 3; ++k) bytes[std::size_t(i) * 3 + k] = to_byte(rgb.data()(i, k));
  }
  write_png_rows(path, rgb.height(), rgb.width(), PNG_COLOR_TYPE_RGB, bytes, rgb.width() * 3, nullptr);
}

Image read_png(const std::filesystem::path& path) {
  int h = 0, w = 0, ch = 0;
  const auto bytes = read_png_bytes(path, true, h, w, ch);
  if (ch != 3) throw IoError("unsupported PNG channel layout in '" + path.string() + "'");
  Image img(h, w, 3);
  for (Eigen::Index i = 0; i < img.pixel_count(); ++i) {
    for (int k = 0; k < 3; ++k) img.data()(i, k) = bytes[std::size_t(i) * 3 + k] / 255.0;
  }
  return img;
}

void write_indexed_png(int height, int width, const std::vector<unsigned char>& indices,
                       const std::filesystem::path& path) {
  if (indices.size() != std::size_t(height) * width) throw ValidationError("index buffer size mismatch");
  std::vector<png_color> palette(256);
  for (int i = 0; i < 256; ++i) {
    // Evenly spread hues for group ids; index 255 (background) is black.
    const double h = std::fmod(i * 0.618033988749895, 1.0) * 6.0;
    const int s = int(h);
    const double f = h - s;
    const double v = 230, lo = 60, mid_up = lo + (v - lo) * f, mid_down = v - (v - lo) * f;
    std::array<double, 3> c{};
    switch (s) {
      case 0: c = {v, mid_up, lo}; break;
      case 1: c = {mid_down, v, lo}; break;
      case 2: c = {lo, v, mid_up}; break;
      case 3: c = {lo, mid_down, v}; break;
      case 4: c = {mid_up, lo, v}; break;
      default: c = {v, lo, mid_down}; break;
    }
    palette[i] = {png_byte(c[0]), png_byte(c[1]), png_byte(c[2])};
  }
  palette[255] = {0, 0, 0};
  write_png_rows(path, height, width, PNG_COLOR_TYPE_PALETTE, indices, width, &palette);
}

std::vector<unsigned char> read_indexed_png(const std::filesystem::path& path, int& height, int& width) {
  int ch = 0;
  auto bytes = read_png_bytes(path, false, height, width, ch);
  if (ch != 1) throw IoError("'" + path.string() + "' is not an indexed PNG");
  return bytes;
}

void write_pfm(const Image& img, const std::filesystem::path& path) {
  const bool color = img.channels() == 3;
  const int planes = color ? 1 : img.channels();
  const int width = img.width();
  const int height = img.height() * planes;
  auto f = open_file(path, "wb");
  const std::string header = std::string(color ? "PF" : "Pf") + "\n" + std::to_string(width) + " " +
                             std::to_string(height) + "\n-1.0\n";
  std::fwrite(header.data(), 1, header.size(), f.get());
  // PFM stores scanlines bottom to top; plane k occupies output rows [k*H, (k+1)*H).
  std::vector<float> row(std::size_t(width) * (color ? 3 : 1));
  for (int out_r = height - 1; out_r >= 0; --out_r) {
    const int plane = out_r / img.height();
    const int r = out_r % img.height();
    for (int c = 0; c < width; ++c) {
      if (color) {
        for (int k = 0; k < 3; ++k) row[std::size_t(c) * 3 + k] = float(img(r, c, k));
      } else {
        row[c] = float(img(r, c, plane));
      }
    }
    if constexpr (std::endian::native != std::endian::little) {
      for (auto& v : row) v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
    }
    std::fwrite(row.data(), sizeof(float), row.size(), f.get());
  }
}

Image read_pfm(const std::filesystem::path& path, int channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string magic;
  int width = 0, height = 0;
  double scale = 0;
  in >> magic >> width >> height >> scale;
  in.get();
  if ((magic != "PF" && magic != "Pf") || width < 1 || height < 1) {
    throw IoError("'" + path.string() + "' is not a PFM file");
  }
  const bool color = magic == "PF";
  const bool little = scale < 0;
  const int per_pixel = color ? 3 : 1;
  std::vector<float> data(std::size_t(width) * height * per_pixel);
  in.read(reinterpret_cast<char*>(data.data()), std::streamsize(data.size() * sizeof(float)));
  if (!in) throw IoError("truncated PFM '" + path.string() + "'");
  if (little != (std::endian::native == std::endian::little)) {
    for (auto& v : data) v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
  }
  if (color) {
    Image img(height, width, 3);
    for (int r = 0; r < height; ++r) {
      const int src = height - 1 - r;
      for (int c = 0; c < width; ++c) {
        for (int k = 0; k < 3; ++k) img(r, c, k) = data[(std::size_t(src) * width + c) * 3 + k];
      }
    }
    return img;
  }
  const int planes = channels > 0 ? channels : 1;
  if (height % planes != 0) throw IoError("PFM height is not a multiple of the plane count");
  const int h = height / planes;
  Image img(h, width, planes);
  for (int out_r = 0; out_r < height; ++out_r) {
    const int src = height - 1 - out_r;
    for (int c = 0; c < width; ++c) img(out_r % h, c, out_r / h) = data[std::size_t(src) * width + c];
  }
  return img;
}

std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("SHA-256 computation failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text(path)); }

}  // namespace stylesplat
