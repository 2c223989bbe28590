#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fusedet/core/tensor.hpp"

namespace fusedet::radar {

// One 4D radar return: 3D position in the radar frame plus radial Doppler
// velocity and reflected power.
struct RadarPoint {
  std::array<double, 3> position{};  // meters
  double velocity = 0;               // m/s
  double power = 0;                  // dB-like, normalized downstream
};

using RadarPointCloud = std::vector<RadarPoint>;

// Pinhole camera + rigid radar->camera transform.
struct Calibration {
  std::array<double, 9> intrinsics{};    // row-major 3x3
  std::array<double, 16> extrinsics{};   // row-major 4x4
  int64_t image_h = 0, image_w = 0;

  void validate() const;

  // fx = fy = 0.5*W, principal point at the image center, identity extrinsics.
  static Calibration synthetic_default(int64_t H, int64_t W);
};

struct ProjectedPoint {
  double u = 0, v = 0;      // pixels
  double range = 0;         // meters, camera-frame Euclidean norm
  double elevation = 0;     // camera-frame Y coordinate
  double velocity = 0;
  double power = 0;
};

// Projects the cloud onto the image plane. Points behind the camera or
// outside [0,W)x[0,H) are culled. Throws ConfigError on invalid calibration.
std::vector<ProjectedPoint> project_points(const RadarPointCloud& cloud, const Calibration& calib);

// Applies a rigid 4x4 transform to every point position (velocity/power kept).
RadarPointCloud transform_cloud(const RadarPointCloud& cloud, const std::array<double, 16>& T);

std::array<double, 16> mat4_mul(const std::array<double, 16>& a, const std::array<double, 16>& b);
std::array<double, 16> rigid_inverse(const std::array<double, 16>& T);

// Four-channel (range, elevation, velocity, power) raster aligned to the
// camera plane. Pixels never hit by a point are zero with valid=false.
template <class T>
struct REVPMap {
  Tensor<T> data;          // [4, H, W]
  Tensor<uint8_t> valid;   // [H, W]

  REVPMap() = default;
  REVPMap(int64_t H, int64_t W) : data({4, H, W}), valid({H, W}) {}
  int64_t height() const { return data.dim(1); }
  int64_t width() const { return data.dim(2); }
};

enum RevpChannel { kRange = 0, kElevation = 1, kVelocity = 2, kPower = 3 };

// Nearest-pixel splatting; on collision the smaller-range point wins
// (nearest surface occludes).
template <class T>
REVPMap<T> build_revp_map(const std::vector<ProjectedPoint>& projected, int64_t H, int64_t W) {
  REVPMap<T> map(H, W);
  for (const auto& p : projected) {
    const int64_t px = std::min<int64_t>(W - 1, static_cast<int64_t>(std::floor(p.u + 0.5)));
    const int64_t py = std::min<int64_t>(H - 1, static_cast<int64_t>(std::floor(p.v + 0.5)));
    check(px >= 0 && py >= 0, "build_revp_map: pixel out of bounds");
    const int64_t i = py * W + px;
    if (map.valid[i] && static_cast<double>(map.data[kRange * H * W + i]) <= p.range) continue;
    map.valid[i] = 1;
    map.data[kRange * H * W + i] = static_cast<T>(p.range);
    map.data[kElevation * H * W + i] = static_cast<T>(p.elevation);
    map.data[kVelocity * H * W + i] = static_cast<T>(p.velocity);
    map.data[kPower * H * W + i] = static_cast<T>(p.power);
  }
  return map;
}

struct ChannelStats {
  double mean = 0, std = 1;
};

using RevpStats = std::array<ChannelStats, 4>;

// Standardizes valid pixels per channel; invalid pixels stay exactly zero.
template <class T>
REVPMap<T> normalize_revp(const REVPMap<T>& map, const RevpStats& stats) {
  for (const auto& s : stats) check_config(s.std > 0, "normalize_revp: std must be > 0");
  const int64_t H = map.height(), W = map.width();
  REVPMap<T> out(H, W);
  out.valid = map.valid;
  for (int64_t c = 0; c < 4; ++c) {
    const T* src = map.data.ptr() + c * H * W;
    T* dst = out.data.ptr() + c * H * W;
    for (int64_t i = 0; i < H * W; ++i)
      if (map.valid[i])
        dst[i] = static_cast<T>((static_cast<double>(src[i]) - stats[c].mean) / stats[c].std);
  }
  return out;
}

// --- cloud / calibration file formats ------------------------------------
// Text cloud: one "x y z velocity power" record per line ('#' comments).
// Binary cache: magic + count + packed doubles, bit-exact round trip.
RadarPointCloud read_cloud_text(const std::string& path);
void write_cloud_text(const std::string& path, const RadarPointCloud& cloud);
RadarPointCloud read_cloud_binary(const std::string& path);
void write_cloud_binary(const std::string& path, const RadarPointCloud& cloud);

// Key-value calibration block: intrinsics/extrinsics row-major, image_size.
Calibration read_calibration(const std::string& path);
void write_calibration(const std::string& path, const Calibration& calib);

}  // namespace fusedet::radar
