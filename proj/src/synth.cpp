#include "fusedet/synth/generator.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fusedet/core/error.hpp"

namespace fusedet::synth {

namespace fs = std::filesystem;

const char* condition_name(Condition c) {
  switch (c) {
    case Condition::Normal: return "normal";
    case Condition::AdverseLighting: return "adverse_lighting";
    default: return "adverse_weather";
  }
}

Condition condition_from_name(const std::string& name) {
  if (name == "normal") return Condition::Normal;
  if (name == "adverse_lighting") return Condition::AdverseLighting;
  if (name == "adverse_weather") return Condition::AdverseWeather;
  throw IoError("unknown condition: " + name);
}

std::string SynthConfig::canonical() const {
  std::ostringstream os;
  os << "generator=v2\nimage_size=" << image_size << "\nnum_classes=" << num_classes
     << "\nobjects=" << objects_min << ".." << objects_max << "\nblur=" << blur_sigma_min << ".."
     << blur_sigma_max << "\nradar_points=" << radar_points_min << ".." << radar_points_max
     << "\nclutter=" << clutter_min << ".." << clutter_max << "\npower_noise=" << power_noise_std
     << "\nmix=" << mix_normal << "," << mix_lighting << "," << mix_weather << "\nseed=" << seed
     << "\n";
  return os.str();
}

uint64_t SynthConfig::hash() const { return fnv1a(canonical()); }

namespace {

// Local RGBA patch; objects are drawn and blurred here, then composited.
struct Patch {
  int64_t x0 = 0, y0 = 0, w = 0, h = 0;
  std::vector<float> rgba;  // 4 * w * h, premultiplied-by-alpha colors

  Patch(int64_t x0_, int64_t y0_, int64_t w_, int64_t h_)
      : x0(x0_), y0(y0_), w(w_), h(h_), rgba(static_cast<size_t>(4 * w_ * h_), 0.f) {}

  float* px(int64_t x, int64_t y) { return rgba.data() + 4 * (y * w + x); }

  void paint(int64_t x, int64_t y, float r, float g, float b, float a) {
    if (x < 0 || x >= w || y < 0 || y >= h || a <= 0) return;
    float* p = px(x, y);
    // over-composite within the patch
    const float ia = 1.f - a;
    p[0] = r * a + p[0] * ia;
    p[1] = g * a + p[1] * ia;
    p[2] = b * a + p[2] * ia;
    p[3] = a + p[3] * ia;
  }
};

void draw_disc(Patch& p, double cx, double cy, double r, const float col[3]) {
  for (int64_t y = 0; y < p.h; ++y)
    for (int64_t x = 0; x < p.w; ++x) {
      const double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
      const float a = static_cast<float>(std::clamp(r - d + 0.5, 0.0, 1.0));
      p.paint(x, y, col[0], col[1], col[2], a);
    }
}

void draw_rounded_rect(Patch& p, double x0, double y0, double x1, double y1, double radius,
                       const float col[3]) {
  for (int64_t y = 0; y < p.h; ++y)
    for (int64_t x = 0; x < p.w; ++x) {
      const double px = static_cast<double>(x), py = static_cast<double>(y);
      const double dx = std::max({x0 + radius - px, 0.0, px - (x1 - radius)});
      const double dy = std::max({y0 + radius - py, 0.0, py - (y1 - radius)});
      double a;
      if (dx > 0 && dy > 0)
        a = std::clamp(radius - std::hypot(dx, dy) + 0.5, 0.0, 1.0);
      else
        a = std::clamp(std::min({px - x0, x1 - px, py - y0, y1 - py}) + 0.5, 0.0, 1.0);
      p.paint(x, y, col[0], col[1], col[2], static_cast<float>(a));
    }
}

void gaussian_blur_patch(Patch& p, double sigma) {
  if (sigma <= 0.05) return;
  const int64_t rad = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3 * sigma)));
  std::vector<float> k(static_cast<size_t>(2 * rad + 1));
  float sum = 0;
  for (int64_t i = -rad; i <= rad; ++i) {
    k[static_cast<size_t>(i + rad)] =
        static_cast<float>(std::exp(-0.5 * (static_cast<double>(i) * i) / (sigma * sigma)));
    sum += k[static_cast<size_t>(i + rad)];
  }
  for (auto& v : k) v /= sum;
  std::vector<float> tmp(p.rgba.size(), 0.f);
  for (int64_t y = 0; y < p.h; ++y)
    for (int64_t x = 0; x < p.w; ++x)
      for (int c = 0; c < 4; ++c) {
        float s = 0;
        for (int64_t i = -rad; i <= rad; ++i) {
          const int64_t xx = std::clamp<int64_t>(x + i, 0, p.w - 1);
          s += k[static_cast<size_t>(i + rad)] * p.rgba[static_cast<size_t>(4 * (y * p.w + xx) + c)];
        }
        tmp[static_cast<size_t>(4 * (y * p.w + x) + c)] = s;
      }
  for (int64_t y = 0; y < p.h; ++y)
    for (int64_t x = 0; x < p.w; ++x)
      for (int c = 0; c < 4; ++c) {
        float s = 0;
        for (int64_t i = -rad; i <= rad; ++i) {
          const int64_t yy = std::clamp<int64_t>(y + i, 0, p.h - 1);
          s += k[static_cast<size_t>(i + rad)] * tmp[static_cast<size_t>(4 * (yy * p.w + x) + c)];
        }
        p.rgba[static_cast<size_t>(4 * (y * p.w + x) + c)] = s;
      }
}

struct DrawnObject {
  int cls = 0;
  det::Box box{};  // normalized
  std::vector<std::pair<int64_t, int64_t>> solid_pixels;  // image coords, alpha >= 0.5
  std::pair<int64_t, int64_t> coverage{0, 0};
};

void jitter(float* col, Rng& rng, double amt) {
  for (int i = 0; i < 3; ++i)
    col[i] = static_cast<float>(std::clamp(col[i] + rng.uniform(-amt, amt), 0.05, 0.98));
}

// Draws one object into its own patch, blurs it, composites, and derives the
// tight box from the blurred footprint.
bool draw_object(Tensor<float>& img, int cls, Rng& rng, const SynthConfig& cfg,
                 const std::vector<det::Box>& existing, DrawnObject& out) {
  const int64_t S = cfg.image_size;
  const double scale = static_cast<double>(S) / 128.0;
  double w_px = 0, h_px = 0;
  if (cls == 0) {
    const double r = rng.uniform(4, 8) * scale;
    w_px = h_px = 2 * r;
  } else if (cls == 1) {
    w_px = rng.uniform(18, 40) * scale;
    h_px = w_px * rng.uniform(0.40, 0.52);
  } else {
    w_px = rng.uniform(48, 100) * scale;
    h_px = w_px * rng.uniform(0.30, 0.42);
  }
  const double sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
  const int64_t margin = static_cast<int64_t>(std::ceil(3 * sigma)) + 2;

  for (int attempt = 0; attempt < 25; ++attempt) {
    const double cx = rng.uniform(w_px / 2 + margin + 1, static_cast<double>(S) - w_px / 2 - margin - 1);
    const double cy = rng.uniform(h_px + margin + 1, static_cast<double>(S) - h_px / 2 - margin - 1);
    det::Box cand{cx / static_cast<double>(S), cy / static_cast<double>(S),
                  (w_px + 2) / static_cast<double>(S), (h_px + 2) / static_cast<double>(S)};
    bool clash = false;
    for (const auto& e : existing)
      if (det::iou(cand, e) > 0.3) clash = true;
    if (clash) continue;

    const int64_t px0 = static_cast<int64_t>(std::floor(cx - w_px / 2)) - margin;
    const int64_t py0 = static_cast<int64_t>(std::floor(cy - h_px)) - margin;
    const int64_t pw = static_cast<int64_t>(std::ceil(w_px)) + 2 * margin + 2;
    const int64_t ph = static_cast<int64_t>(std::ceil(h_px * 2)) + 2 * margin + 2;
    Patch patch(px0, py0, pw, ph);
    const double lx = cx - static_cast<double>(px0), ly = cy - static_cast<double>(py0);

    if (cls == 0) {
      float col[3] = {0.85f, 0.30f, 0.12f};
      jitter(col, rng, 0.08);
      draw_disc(patch, lx, ly, w_px / 2, col);
      float top[3] = {0.95f, 0.85f, 0.3f};
      draw_disc(patch, lx, ly - h_px * 0.25, w_px * 0.16, top);
    } else if (cls == 1) {
      float hull[3] = {0.80f, 0.80f, 0.82f};
      jitter(hull, rng, 0.06);
      draw_rounded_rect(patch, lx - w_px / 2, ly - h_px / 2, lx + w_px / 2, ly + h_px / 2,
                        h_px * 0.3, hull);
      float cabin[3] = {0.42f, 0.50f, 0.58f};
      jitter(cabin, rng, 0.05);
      draw_rounded_rect(patch, lx - w_px * 0.18, ly - h_px * 1.0, lx + w_px * 0.22,
                        ly - h_px * 0.4, 1.0, cabin);
    } else {
      float hull[3] = {0.22f, 0.20f, 0.28f};
      jitter(hull, rng, 0.05);
      draw_rounded_rect(patch, lx - w_px / 2, ly - h_px / 2, lx + w_px / 2, ly + h_px / 2, 1.5,
                        hull);
      float super_col[3] = {0.75f, 0.73f, 0.70f};
      jitter(super_col, rng, 0.05);
      draw_rounded_rect(patch, lx + w_px * 0.24, ly - h_px * 1.0, lx + w_px * 0.44,
                        ly - h_px * 0.4, 1.0, super_col);
      const int nboxes = 2 + static_cast<int>(rng.uniform_int(2));
      for (int i = 0; i < nboxes; ++i) {
        float cc[3] = {static_cast<float>(rng.uniform(0.3, 0.8)),
                       static_cast<float>(rng.uniform(0.2, 0.6)),
                       static_cast<float>(rng.uniform(0.2, 0.6))};
        const double bx = lx - w_px * 0.35 + static_cast<double>(i) * w_px * 0.18;
        draw_rounded_rect(patch, bx, ly - h_px * 0.85, bx + w_px * 0.13, ly - h_px * 0.45, 1.0, cc);
      }
    }
    gaussian_blur_patch(patch, sigma);

    // Tight bbox of the blurred footprint and bookkeeping masks.
    int64_t bx0 = pw, by0 = ph, bx1 = -1, by1 = -1;
    for (int64_t y = 0; y < ph; ++y)
      for (int64_t x = 0; x < pw; ++x) {
        const float a = patch.px(x, y)[3];
        if (a >= 0.25f) {
          bx0 = std::min(bx0, x);
          by0 = std::min(by0, y);
          bx1 = std::max(bx1, x);
          by1 = std::max(by1, y);
        }
      }
    if (bx1 < 0) return false;
    const det::Box box{(static_cast<double>(px0) + (bx0 + bx1 + 1) / 2.0) / static_cast<double>(S),
                       (static_cast<double>(py0) + (by0 + by1 + 1) / 2.0) / static_cast<double>(S),
                       static_cast<double>(bx1 - bx0 + 1) / static_cast<double>(S),
                       static_cast<double>(by1 - by0 + 1) / static_cast<double>(S)};
    if (box[0] - box[2] / 2 < 0 || box[0] + box[2] / 2 > 1 || box[1] - box[3] / 2 < 0 ||
        box[1] + box[3] / 2 > 1)
      continue;

    out.cls = cls;
    out.box = box;
    out.solid_pixels.clear();
    int64_t inside = 0, total = 0;
    for (int64_t y = 0; y < ph; ++y)
      for (int64_t x = 0; x < pw; ++x) {
        if (patch.px(x, y)[3] < 0.5f) continue;
        ++total;
        const int64_t gx = px0 + x, gy = py0 + y;
        if (gx >= 0 && gx < S && gy >= 0 && gy < S) {
          out.solid_pixels.emplace_back(gx, gy);
          if (x >= bx0 && x <= bx1 && y >= by0 && y <= by1) ++inside;
        }
      }
    out.coverage = {inside, total};

    // Composite onto the image.
    for (int64_t y = 0; y < ph; ++y)
      for (int64_t x = 0; x < pw; ++x) {
        const int64_t gx = px0 + x, gy = py0 + y;
        if (gx < 0 || gx >= S || gy < 0 || gy >= S) continue;
        const float* p = patch.px(x, y);
        const float a = p[3];
        if (a <= 0) continue;
        for (int c = 0; c < 3; ++c) {
          float& dst = img.at4(0, c, gy, gx);
          dst = p[c] + dst * (1.f - a);
        }
      }
    return true;
  }
  return false;
}

void water_background(Tensor<float>& img, Rng& rng, int64_t S) {
  const double ph1 = rng.uniform(0, 2 * M_PI), ph2 = rng.uniform(0, 2 * M_PI);
  const double f1 = rng.uniform(0.15, 0.35), f2 = rng.uniform(0.5, 0.9);
  for (int64_t y = 0; y < S; ++y) {
    const double t = static_cast<double>(y) / static_cast<double>(S);
    const double base[3] = {0.08 + 0.08 * t, 0.13 + 0.12 * t, 0.18 + 0.15 * t};
    for (int64_t x = 0; x < S; ++x) {
      const double wave = 0.015 * std::sin(f1 * x + 0.3 * y + ph1) +
                          0.010 * std::sin(f2 * x - 0.2 * y + ph2);
      for (int c = 0; c < 3; ++c) {
        const double v = base[c] + wave + rng.normal(0, 0.01);
        img.at4(0, c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

}  // namespace

SceneSample generate_scene(const SynthConfig& cfg, int64_t index) {
  check(index >= 0, "generate_scene: index must be >= 0");
  const int64_t S = cfg.image_size;
  Rng rng = Rng(cfg.seed).fork("scene").fork(static_cast<uint64_t>(index));

  SceneSample s;
  s.seed = cfg.seed;
  s.index = index;
  s.image = Tensor<float>({1, 3, S, S});
  water_background(s.image, rng, S);

  const int n_objects =
      cfg.objects_min + static_cast<int>(rng.uniform_int(cfg.objects_max - cfg.objects_min + 1));
  std::vector<DrawnObject> drawn;
  std::vector<det::Box> existing;
  // Large classes first so later (smaller) objects remain visible.
  std::vector<int> classes;
  for (int i = 0; i < n_objects; ++i)
    classes.push_back(static_cast<int>(rng.uniform_int(cfg.num_classes)));
  std::stable_sort(classes.begin(), classes.end(), [](int a, int b) { return a > b; });
  for (int cls : classes) {
    DrawnObject obj;
    if (draw_object(s.image, cls, rng, cfg, existing, obj)) {
      existing.push_back(obj.box);
      drawn.push_back(std::move(obj));
    }
  }

  const auto calib = cfg.calibration();
  const double fx = calib.intrinsics[0], fy = calib.intrinsics[4];
  const double cx0 = calib.intrinsics[2], cy0 = calib.intrinsics[5];
  // class-correlated depth, velocity and reflected power
  const double depth_lo[3] = {6, 10, 15}, depth_hi[3] = {18, 30, 45};
  const double power_mean[3] = {8, 16, 28};
  for (const auto& obj : drawn) {
    s.targets.push_back(Target{obj.cls, obj.box});
    s.coverage.push_back(obj.coverage);
    const double z0 = rng.uniform(depth_lo[obj.cls], depth_hi[obj.cls]);
    double v0 = 0;
    if (obj.cls == 0)
      v0 = rng.normal(0, 0.15);
    else if (obj.cls == 1)
      v0 = (rng.bernoulli(0.5) ? 1 : -1) * rng.normal(3.0, 1.0);
    else
      v0 = (rng.bernoulli(0.5) ? 1 : -1) * rng.normal(1.5, 0.5);
    const int np = cfg.radar_points_min +
                   static_cast<int>(rng.uniform_int(cfg.radar_points_max - cfg.radar_points_min + 1));
    for (int i = 0; i < np && !obj.solid_pixels.empty(); ++i) {
      const auto [u, v] = obj.solid_pixels[static_cast<size_t>(
          rng.uniform_int(static_cast<int64_t>(obj.solid_pixels.size())))];
      const double z = z0 + rng.normal(0, 0.5);
      radar::RadarPoint pt;
      pt.position = {(static_cast<double>(u) - cx0) * z / fx,
                     (static_cast<double>(v) - cy0) * z / fy, z};
      pt.velocity = v0 + rng.normal(0, 0.1);
      pt.power = rng.normal(power_mean[obj.cls], cfg.power_noise_std);
      s.cloud.push_back(pt);
    }
  }
  const int n_clutter =
      cfg.clutter_min + static_cast<int>(rng.uniform_int(cfg.clutter_max - cfg.clutter_min + 1));
  for (int i = 0; i < n_clutter; ++i) {
    const double u = rng.uniform(0, static_cast<double>(S) - 1);
    const double v = rng.uniform(0, static_cast<double>(S) - 1);
    const double z = rng.uniform(4, 60);
    radar::RadarPoint pt;
    pt.position = {(u - cx0) * z / fx, (v - cy0) * z / fy, z};
    pt.velocity = rng.normal(0, 2.0);
    pt.power = rng.normal(3.0, cfg.power_noise_std);
    s.cloud.push_back(pt);
  }
  return s;
}

SceneSample apply_condition(const SceneSample& s, Condition condition) {
  check(s.condition == Condition::Normal,
        "apply_condition: sample already carries a condition");
  SceneSample out = s;
  out.condition = condition;
  if (condition == Condition::Normal) return out;
  Rng rng = Rng(s.seed).fork("condition").fork(static_cast<uint64_t>(s.index));
  const int64_t S = s.image.dim(3);

  if (condition == Condition::AdverseLighting) {
    // Severe underexposure: gamma crush, strong darkening and sensor noise
    // at a level comparable to the remaining object contrast. The image
    // alone carries little evidence; the radar cloud is untouched.
    for (int64_t i = 0; i < out.image.numel(); ++i) {
      const double v = std::pow(static_cast<double>(s.image[i]), 1.6) * 0.12 + rng.normal(0, 0.055);
      out.image[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return out;
  }

  // Adverse weather: heavy local contrast loss, haze, and dense rain streaks.
  Tensor<float> blurred = out.image;
  for (int c = 0; c < 3; ++c)
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x) {
        float acc = 0;
        int cnt = 0;
        for (int64_t dy = -3; dy <= 3; ++dy)
          for (int64_t dx = -3; dx <= 3; ++dx) {
            const int64_t yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= S || xx < 0 || xx >= S) continue;
            acc += s.image.at4(0, c, yy, xx);
            ++cnt;
          }
        blurred.at4(0, c, y, x) = acc / static_cast<float>(cnt);
      }
  for (int64_t i = 0; i < out.image.numel(); ++i) {
    const double v = 0.30 * s.image[i] + 0.70 * blurred[i];
    out.image[i] =
        static_cast<float>(std::clamp(v * 0.70 + 0.16 + rng.normal(0, 0.02), 0.0, 1.0));
  }
  const int n_streaks = (3 * static_cast<int>(S) / 2) +
                        static_cast<int>(rng.uniform_int(static_cast<int64_t>(S)));
  const double angle = rng.uniform(0.25, 0.5);  // radians off vertical, shared per scene
  for (int i = 0; i < n_streaks; ++i) {
    double x = rng.uniform(0, static_cast<double>(S));
    double y = rng.uniform(0, static_cast<double>(S));
    const double len = rng.uniform(8, 20);
    const float bright = static_cast<float>(rng.uniform(0.35, 0.6));
    for (double t = 0; t < len; t += 1.0) {
      const int64_t xx = static_cast<int64_t>(x + t * std::sin(angle));
      const int64_t yy = static_cast<int64_t>(y + t * std::cos(angle));
      if (xx < 0 || xx >= S || yy < 0 || yy >= S) continue;
      for (int c = 0; c < 3; ++c) {
        float& dst = out.image.at4(0, c, yy, xx);
        dst = std::min(1.0f, dst + bright * 0.7f);
      }
    }
  }
  return out;
}

Splits build_splits(const SynthConfig& cfg, int64_t n_train, int64_t n_val, int64_t n_test) {
  check_config(n_train >= 1 && n_val >= 1 && n_test >= 1, "build_splits: counts must be >= 1");
  Splits sp;
  Rng mix_rng = Rng(cfg.seed).fork("mix");
  auto pick_mix = [&](int64_t index) {
    Rng r = mix_rng.fork(static_cast<uint64_t>(index));
    const double u = r.uniform();
    if (u < cfg.mix_normal) return Condition::Normal;
    if (u < cfg.mix_normal + cfg.mix_lighting) return Condition::AdverseLighting;
    return Condition::AdverseWeather;
  };
  for (int64_t i = 0; i < n_train; ++i) sp.train.push_back({i, pick_mix(i)});
  for (int64_t i = 0; i < n_val; ++i) sp.val.push_back({n_train + i, pick_mix(n_train + i)});
  static const Condition cycle[3] = {Condition::Normal, Condition::AdverseLighting,
                                     Condition::AdverseWeather};
  for (int64_t i = 0; i < n_test; ++i)
    sp.test.push_back({n_train + n_val + i, cycle[i % 3]});
  return sp;
}

void write_ppm(const std::string& path, const Tensor<float>& image) {
  const int64_t H = image.dim(2), W = image.dim(3);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write image: " + path);
  f << "P6\n" << W << " " << H << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(3 * W));
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<size_t>(3 * x + c)] = static_cast<unsigned char>(
            std::clamp<int>(static_cast<int>(std::lround(image.at4(0, c, y, x) * 255.f)), 0, 255));
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

Tensor<float> read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read image: " + path);
  std::string magic;
  int64_t W = 0, H = 0;
  int maxval = 0;
  f >> magic >> W >> H >> maxval;
  if (magic != "P6" || maxval != 255) throw IoError("unsupported ppm: " + path);
  f.get();
  Tensor<float> img({1, 3, H, W});
  std::vector<unsigned char> row(static_cast<size_t>(3 * W));
  for (int64_t y = 0; y < H; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    for (int64_t x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        img.at4(0, c, y, x) = static_cast<float>(row[static_cast<size_t>(3 * x + c)]) / 255.f;
  }
  if (!f) throw IoError("truncated ppm: " + path);
  return img;
}

namespace {

std::string index_name(int64_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06lld", static_cast<long long>(index));
  return buf;
}

void write_manifest(const std::string& path, const CorpusMeta& meta,
                    const std::vector<ManifestEntry>& entries) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw IoError("cannot write manifest: " + path);
    char buf[256];
    f << "# fusedet corpus manifest\n";
    std::snprintf(buf, sizeof(buf), "config_hash = %016llx\n",
                  static_cast<unsigned long long>(meta.config_hash));
    f << buf;
    f << "image_size = " << meta.image_size << "\n";
    f << "num_classes = " << meta.num_classes << "\n";
    f << "revp_stats =";
    for (const auto& s : meta.revp_stats) {
      std::snprintf(buf, sizeof(buf), " %.17g %.17g", s.mean, s.std);
      f << buf;
    }
    f << "\ncount = " << entries.size() << "\n";
    for (const auto& e : entries) {
      f << e.index << " " << condition_name(e.condition) << " " << e.targets.size();
      for (const auto& t : e.targets) {
        std::snprintf(buf, sizeof(buf), " %d %.17g %.17g %.17g %.17g", t.cls, t.box[0], t.box[1],
                      t.box[2], t.box[3]);
        f << buf;
      }
      f << "\n";
    }
  }
  fs::rename(tmp, path);
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::string& path, CorpusMeta* meta) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest: " + path);
  CorpusMeta m;
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq != std::string::npos) {  // header lines carry '=', records never do
      std::istringstream is(line.substr(eq + 1));
      const std::string key = line.substr(0, line.find(' '));
      if (key == "config_hash") {
        std::string hex;
        is >> hex;
        m.config_hash = std::stoull(hex, nullptr, 16);
      } else if (key == "image_size") {
        is >> m.image_size;
      } else if (key == "num_classes") {
        is >> m.num_classes;
      } else if (key == "revp_stats") {
        for (auto& s : m.revp_stats) is >> s.mean >> s.std;
      }
      continue;
    }
    std::istringstream is(line);
    ManifestEntry e;
    std::string cond;
    size_t n = 0;
    if (!(is >> e.index >> cond >> n)) continue;
    e.condition = condition_from_name(cond);
    for (size_t i = 0; i < n; ++i) {
      Target t;
      is >> t.cls >> t.box[0] >> t.box[1] >> t.box[2] >> t.box[3];
      e.targets.push_back(t);
    }
    entries.push_back(std::move(e));
  }
  if (meta) *meta = m;
  return entries;
}

CorpusMeta build_corpus(const SynthConfig& cfg, const Splits& splits, const std::string& dir,
                        bool force) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "clouds");
  CorpusMeta meta;
  meta.config_hash = cfg.hash();
  meta.image_size = cfg.image_size;
  meta.num_classes = cfg.num_classes;

  const std::string train_manifest = (fs::path(dir) / "train.manifest").string();
  if (!force && fs::exists(train_manifest)) {
    CorpusMeta existing;
    read_manifest(train_manifest, &existing);
    if (existing.config_hash == meta.config_hash) return existing;  // cache hit
  }

  // Welford-style accumulation of per-channel stats over valid REVP pixels
  // of the train split.
  double sum[4] = {0, 0, 0, 0}, sumsq[4] = {0, 0, 0, 0};
  int64_t count = 0;
  const auto calib = cfg.calibration();

  auto emit = [&](const std::vector<SplitRecord>& records, bool accumulate_stats,
                  std::vector<ManifestEntry>& out_entries) {
    for (const auto& rec : records) {
      SceneSample s = generate_scene(cfg, rec.index);
      if (rec.condition != Condition::Normal) s = apply_condition(s, rec.condition);
      const std::string img_path =
          (fs::path(dir) / "images" / (index_name(rec.index) + ".ppm")).string();
      const std::string cloud_path =
          (fs::path(dir) / "clouds" / (index_name(rec.index) + ".bin")).string();
      const std::string img_tmp = img_path + ".tmp";
      write_ppm(img_tmp, s.image);
      fs::rename(img_tmp, img_path);
      const std::string cloud_tmp = cloud_path + ".tmp";
      radar::write_cloud_binary(cloud_tmp, s.cloud);
      fs::rename(cloud_tmp, cloud_path);
      ManifestEntry e;
      e.index = rec.index;
      e.condition = rec.condition;
      e.targets = s.targets;
      out_entries.push_back(std::move(e));
      if (accumulate_stats) {
        auto proj = radar::project_points(s.cloud, calib);
        auto map = radar::build_revp_map<double>(proj, cfg.image_size, cfg.image_size);
        const int64_t HW = cfg.image_size * cfg.image_size;
        for (int64_t i = 0; i < HW; ++i) {
          if (!map.valid[i]) continue;
          ++count;
          for (int c = 0; c < 4; ++c) {
            const double v = map.data[c * HW + i];
            sum[c] += v;
            sumsq[c] += v * v;
          }
        }
      }
    }
  };

  std::vector<ManifestEntry> train_e, val_e, test_e;
  emit(splits.train, true, train_e);
  emit(splits.val, false, val_e);
  emit(splits.test, false, test_e);

  for (int c = 0; c < 4; ++c) {
    const double mean = count ? sum[c] / static_cast<double>(count) : 0.0;
    const double var = count ? std::max(1e-12, sumsq[c] / static_cast<double>(count) - mean * mean)
                             : 1.0;
    meta.revp_stats[static_cast<size_t>(c)] = {mean, std::sqrt(var)};
  }

  write_manifest(train_manifest, meta, train_e);
  write_manifest((fs::path(dir) / "val.manifest").string(), meta, val_e);
  write_manifest((fs::path(dir) / "test.manifest").string(), meta, test_e);
  return meta;
}

}  // namespace fusedet::synth
