#pragma once

#include "stylesplat/scene.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace stylesplat {

using nlohmann::json;

json to_json(const GaussianScene& scene);
GaussianScene scene_from_json(const json& j);
json to_json(const Camera& cam);
Camera camera_from_json(const json& j);

void save_scene(const GaussianScene& scene, const std::filesystem::path& path);
GaussianScene load_scene(const std::filesystem::path& path);

/// Camera files hold a single camera object or an array of them.
void save_cameras(const std::vector<Camera>& cams, const std::filesystem::path& path);
std::vector<Camera> load_cameras(const std::filesystem::path& path);

json read_json(const std::filesystem::path& path);
void write_json(const json& j, const std::filesystem::path& path);
void write_text(const std::string& text, const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

/// Rounds [0,1] values to 8 bits and back, the precision stored in PNG files.
Image quantize8(const Image& img);

/// 8-bit RGB PNG. Values are clamped to [0,1].
void write_png(const Image& rgb, const std::filesystem::path& path);
/// Loads any 8-bit PNG as RGB in [0,1].
Image read_png(const std::filesystem::path& path);

/// 8-bit palette PNG of raw indices (0..255).
void write_indexed_png(int height, int width, const std::vector<unsigned char>& indices,
                       const std::filesystem::path& path);
std::vector<unsigned char> read_indexed_png(const std::filesystem::path& path, int& height, int& width);

/// Little-endian PFM. One-channel images are written as "Pf", three-channel as "PF";
/// other channel counts are written as "Pf" with the planes stacked vertically.
void write_pfm(const Image& img, const std::filesystem::path& path);
Image read_pfm(const std::filesystem::path& path, int channels = -1);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace stylesplat
