#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fednerf/radiance.hpp"
#include "fednerf/scene.hpp"

namespace fednerf {

/// Binary PPM (P6, maxval 255). Values are rounded to the nearest level.
std::vector<std::uint8_t> encode_ppm(const Image& img);
Image decode_ppm(std::span<const std::uint8_t> bytes);

void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Rounds every channel to the nearest 8-bit level.
Image quantize8(const Image& img);

/// Scene directory layout:
///   images/<name>.ppm
///   poses.txt   name r00 r01 r02 r03 r10 ... r23 focal cx cy
///   split.txt   name pretrain | name client <k> | name val
void write_scene(const std::filesystem::path& dir, const SceneSplit& split);

/// Loads a scene directory. stored_bytes is taken from the files on disk.
SceneSplit load_scene(const std::filesystem::path& dir);

}  // namespace fednerf
