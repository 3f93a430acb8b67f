// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
// File formats. Every reader throws IoError on missing files and malformed content.
//
#pragma once

#include "surfelslam/oracle.hpp"
#include "surfelslam/raster.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace surfelslam {

/// 8-bit RGB. Values are clamped to [0, 1] and rounded.
void  write_png_rgb(const std::filesystem::path &path, const Image &rgb);
Image read_png_rgb(const std::filesystem::path &path);

/// 16-bit grayscale depth, stored as round(depth * factor); 0 means no depth.
void  write_png_depth(const std::filesystem::path &path, const Image &depth, double factor);
Image read_png_depth(const std::filesystem::path &path, double factor);

/// Rounds each value to the nearest 1/255, as write_png_rgb stores it.
Image quantize_rgb(const Image &rgb);

/// Binary little-endian PLY. Vertex properties: x y z nx ny nz sx sy opacity
/// red green blue (doubles), then rot_w rot_x rot_y rot_z confidence (doubles)
/// and kf_id submap_id (int). The reader restores surfels exactly.
void                write_ply(const std::filesystem::path &path, const std::vector<Surfel> &surfels);
std::vector<Surfel> read_ply(const std::filesystem::path &path);

/// TUM text trajectory "timestamp tx ty tz qx qy qz qw", or with `with_scale`
/// "timestamp s tx ty tz qx qy qz qw". Values are written with 17 significant digits.
struct StampedPose {
    double        timestamp{0.0};
    Sim3Transform pose;
};

void                     write_tum(const std::filesystem::path &path, const std::vector<StampedPose> &poses,
                                   bool with_scale = false);
std::vector<StampedPose> read_tum(const std::filesystem::path &path, bool with_scale = false);

/// Frame prediction record: frame_id u32, pose 7 x f64 (tx ty tz qx qy qz qw),
/// point count u32, then per point 3 x f32 position and 12 x f32 attributes
/// (qw qx qy qz, sx sy, opacity, r g b, confidence, pixel index).
void            write_prediction(const std::filesystem::path &path, const FramePrediction &prediction);
FramePrediction read_prediction(const std::filesystem::path &path);

/// "fx fy cx cy width height depth_factor" on one line.
void write_intrinsics(const std::filesystem::path &path, const CameraIntrinsics &intr, double depth_factor);
std::pair<CameraIntrinsics, double> read_intrinsics(const std::filesystem::path &path);

/// Zero-padded six-digit frame file name, e.g. "000042.png".
std::string frame_name(int frame_id, const std::string &extension);

/// Whole file contents; used for checksums and comparisons.
std::string read_file(const std::filesystem::path &path);

} // namespace surfelslam
