#include "fusedet/radar/geometry.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fusedet/core/error.hpp"

namespace fusedet::radar {

namespace {

double det3(const std::array<double, 9>& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

}  // namespace

void Calibration::validate() const {
  check_config(image_h > 0 && image_w > 0, "calibration: image_size must be positive");
  check_config(std::abs(det3(intrinsics)) > 1e-12, "calibration: intrinsics not invertible");
  check_config(extrinsics[12] == 0 && extrinsics[13] == 0 && extrinsics[14] == 0 &&
                   extrinsics[15] == 1,
               "calibration: extrinsics bottom row must be (0,0,0,1)");
  // Rotation block orthonormality within 1e-6.
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0;
      for (int k = 0; k < 3; ++k) dot += extrinsics[k * 4 + i] * extrinsics[k * 4 + j];
      const double expect = (i == j) ? 1.0 : 0.0;
      check_config(std::abs(dot - expect) < 1e-6, "calibration: rotation block not orthonormal");
    }
}

Calibration Calibration::synthetic_default(int64_t H, int64_t W) {
  Calibration c;
  c.image_h = H;
  c.image_w = W;
  const double f = 0.5 * static_cast<double>(W);
  c.intrinsics = {f, 0, W / 2.0, 0, f, H / 2.0, 0, 0, 1};
  c.extrinsics = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  return c;
}

std::vector<ProjectedPoint> project_points(const RadarPointCloud& cloud,
                                           const Calibration& calib) {
  calib.validate();
  const auto& K = calib.intrinsics;
  const auto& E = calib.extrinsics;
  const double Wd = static_cast<double>(calib.image_w);
  const double Hd = static_cast<double>(calib.image_h);
  std::vector<ProjectedPoint> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) {
    const double x = E[0] * p.position[0] + E[1] * p.position[1] + E[2] * p.position[2] + E[3];
    const double y = E[4] * p.position[0] + E[5] * p.position[1] + E[6] * p.position[2] + E[7];
    const double z = E[8] * p.position[0] + E[9] * p.position[1] + E[10] * p.position[2] + E[11];
    if (z <= 0) continue;  // behind the camera
    const double u = (K[0] * x + K[1] * y) / z + K[2];
    const double v = (K[4] * y) / z + K[5];
    if (u < 0 || u >= Wd || v < 0 || v >= Hd) continue;
    ProjectedPoint q;
    q.u = u;
    q.v = v;
    q.range = std::sqrt(x * x + y * y + z * z);
    q.elevation = y;
    q.velocity = p.velocity;
    q.power = p.power;
    out.push_back(q);
  }
  return out;
}

RadarPointCloud transform_cloud(const RadarPointCloud& cloud, const std::array<double, 16>& T) {
  RadarPointCloud out = cloud;
  for (auto& p : out) {
    const auto& q = p.position;
    const std::array<double, 3> r = {T[0] * q[0] + T[1] * q[1] + T[2] * q[2] + T[3],
                                     T[4] * q[0] + T[5] * q[1] + T[6] * q[2] + T[7],
                                     T[8] * q[0] + T[9] * q[1] + T[10] * q[2] + T[11]};
    p.position = r;
  }
  return out;
}

std::array<double, 16> mat4_mul(const std::array<double, 16>& a, const std::array<double, 16>& b) {
  std::array<double, 16> c{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0;
      for (int k = 0; k < 4; ++k) s += a[i * 4 + k] * b[k * 4 + j];
      c[i * 4 + j] = s;
    }
  return c;
}

std::array<double, 16> rigid_inverse(const std::array<double, 16>& T) {
  std::array<double, 16> inv{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) inv[i * 4 + j] = T[j * 4 + i];  // R^T
  for (int i = 0; i < 3; ++i) {
    double s = 0;
    for (int j = 0; j < 3; ++j) s += inv[i * 4 + j] * T[j * 4 + 3];
    inv[i * 4 + 3] = -s;
  }
  inv[15] = 1;
  return inv;
}

RadarPointCloud read_cloud_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open cloud file: " + path);
  RadarPointCloud cloud;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    RadarPoint p;
    if (is >> p.position[0] >> p.position[1] >> p.position[2] >> p.velocity >> p.power)
      cloud.push_back(p);
  }
  return cloud;
}

void write_cloud_text(const std::string& path, const RadarPointCloud& cloud) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write cloud file: " + path);
  f << "# x y z velocity power\n";
  char buf[192];
  for (const auto& p : cloud) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g\n", p.position[0],
                  p.position[1], p.position[2], p.velocity, p.power);
    f << buf;
  }
}

static constexpr char kCloudMagic[8] = {'F', 'D', 'C', 'L', 'O', 'U', 'D', '1'};

RadarPointCloud read_cloud_binary(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open cloud cache: " + path);
  char magic[8];
  f.read(magic, 8);
  if (std::memcmp(magic, kCloudMagic, 8) != 0) throw IoError("bad cloud cache magic: " + path);
  uint64_t n = 0;
  f.read(reinterpret_cast<char*>(&n), sizeof(n));
  RadarPointCloud cloud(n);
  for (auto& p : cloud) {
    double rec[5];
    f.read(reinterpret_cast<char*>(rec), sizeof(rec));
    p.position = {rec[0], rec[1], rec[2]};
    p.velocity = rec[3];
    p.power = rec[4];
  }
  if (!f) throw IoError("truncated cloud cache: " + path);
  return cloud;
}

void write_cloud_binary(const std::string& path, const RadarPointCloud& cloud) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write cloud cache: " + path);
  f.write(kCloudMagic, 8);
  const uint64_t n = cloud.size();
  f.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const auto& p : cloud) {
    const double rec[5] = {p.position[0], p.position[1], p.position[2], p.velocity, p.power};
    f.write(reinterpret_cast<const char*>(rec), sizeof(rec));
  }
}

Calibration read_calibration(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open calibration: " + path);
  Calibration c;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    std::istringstream is(line.substr(eq + 1));
    auto strip = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string k = strip(key);
    if (k == "intrinsics")
      for (auto& v : c.intrinsics) is >> v;
    else if (k == "extrinsics")
      for (auto& v : c.extrinsics) is >> v;
    else if (k == "image_size")
      is >> c.image_h >> c.image_w;
  }
  c.validate();
  return c;
}

void write_calibration(const std::string& path, const Calibration& c) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write calibration: " + path);
  char buf[64];
  f << "intrinsics =";
  for (double v : c.intrinsics) {
    std::snprintf(buf, sizeof(buf), " %.17g", v);
    f << buf;
  }
  f << "\nextrinsics =";
  for (double v : c.extrinsics) {
    std::snprintf(buf, sizeof(buf), " %.17g", v);
    f << buf;
  }
  f << "\nimage_size = " << c.image_h << " " << c.image_w << "\n";
}

}  // namespace fusedet::radar
