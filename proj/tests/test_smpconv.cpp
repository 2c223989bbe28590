#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fusedet/core/optim.hpp"
#include "fusedet/radar/backbone.hpp"
#include "fusedet/radar/smpconv.hpp"
#include "gradcheck.hpp"

using namespace fusedet;
using namespace fusedet::radar;
using fusedet::testing::check_gradients;

namespace {

SMPParamsView<double> view(const Tensor<double>& p, const Tensor<double>& w,
                           const Tensor<double>& r) {
  return SMPParamsView<double>{&p, &w, &r};
}

// Random params with every lattice site kept a safe margin away from any
// L1-ball boundary (membership must not flip under finite differences).
struct RandomParams {
  Tensor<double> p, w, r;
};
RandomParams safe_random_params(Rng& rng, int64_t P, int64_t F, int64_t k, double margin = 1e-3) {
  const Tensor<double> coords = kernel_lattice<double>(k);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    RandomParams out{random_uniform<double>({P, 2}, rng, -1, 1), random_normal<double>({P, F}, rng),
                     random_uniform<double>({P}, rng, 0.3, 1.6)};
    bool ok = true;
    for (int64_t a = 0; a < k && ok; ++a)
      for (int64_t b = 0; b < k && ok; ++b)
        for (int64_t i = 0; i < P && ok; ++i) {
          const double d = std::abs(coords.at3(a, b, 0) - out.p.at2(i, 0)) +
                           std::abs(coords.at3(a, b, 1) - out.p.at2(i, 1));
          if (std::abs(d - out.r[i]) < margin) ok = false;
        }
    if (ok) return out;
  }
  FAIL("could not build boundary-safe params");
  return {};
}

}  // namespace

TEST_CASE("kernel eval at a point: hand cases") {
  Tensor<double> p({1, 2});
  Tensor<double> w({1, 1});
  w[0] = 2.0;
  Tensor<double> r({1});
  r[0] = 1.0;

  double x0[2] = {0, 0};
  CHECK(smp_kernel_eval(x0, 2, view(p, w, r))[0] == doctest::Approx(2.0));

  double x1[2] = {0.5, 0};
  CHECK(smp_kernel_eval(x1, 2, view(p, w, r))[0] == doctest::Approx(1.0));

  double x2[2] = {0.9, 0.9};  // L1 distance 1.8 > r
  CHECK(smp_kernel_eval(x2, 2, view(p, w, r))[0] == 0.0);
}

TEST_CASE("kernel eval averages over the neighbor set") {
  Tensor<double> p({2, 2});
  p.at2(0, 0) = 0.2;
  p.at2(1, 0) = -0.4;
  Tensor<double> w({2, 1});
  w[0] = 1.0;
  w[1] = 3.0;
  Tensor<double> r({2});
  r.fill(1.0);
  double x[2] = {0, 0};
  // ((1-0.2)*1 + (1-0.4)*3)/2 = 1.3
  CHECK(smp_kernel_eval(x, 2, view(p, w, r))[0] == doctest::Approx(1.3));
}

TEST_CASE("grid sampling equals pointwise evaluation (oracle equivalence)") {
  Rng rng(41);
  for (int trial = 0; trial < 120; ++trial) {
    const int64_t P = 1 + rng.uniform_int(12);
    const int64_t out_ch = 1 + rng.uniform_int(3);
    const int64_t in_pg = 1 + rng.uniform_int(3);
    const int64_t k = trial % 2 == 0 ? 3 : 5;
    auto prm = RandomParams{random_uniform<double>({P, 2}, rng, -1.2, 1.2),
                            random_normal<double>({P, out_ch * in_pg}, rng),
                            random_uniform<double>({P}, rng, 0.05, 1.5)};
    auto grid = sample_kernel_grid(view(prm.p, prm.w, prm.r), k, out_ch, in_pg);
    double worst = 0;
    for (int64_t a = 0; a < k; ++a)
      for (int64_t b = 0; b < k; ++b) {
        const double x[2] = {grid.coords.at3(a, b, 0), grid.coords.at3(a, b, 1)};
        auto ref = smp_kernel_eval(x, 2, view(prm.p, prm.w, prm.r));
        for (int64_t o = 0; o < out_ch; ++o)
          for (int64_t ci = 0; ci < in_pg; ++ci)
            worst = std::max(worst,
                             std::abs(grid.values.at4(o, ci, a, b) - ref[o * in_pg + ci]));
      }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("k=1 lattice is the single sample at the origin") {
  auto coords = kernel_lattice<double>(1);
  CHECK(coords.at3(0, 0, 0) == 0.0);
  CHECK(coords.at3(0, 0, 1) == 0.0);
}

TEST_CASE("one covering point makes grid values linear in lattice L1 distance") {
  Tensor<double> p({1, 2});  // at origin
  Tensor<double> w({1, 1});
  w[0] = 4.0;
  Tensor<double> r({1});
  r[0] = 10.0;  // covers the whole lattice
  auto grid = sample_kernel_grid(view(p, w, r), 3, 1, 1);
  for (int64_t a = 0; a < 3; ++a)
    for (int64_t b = 0; b < 3; ++b) {
      const double d = std::abs(grid.coords.at3(a, b, 0)) + std::abs(grid.coords.at3(a, b, 1));
      CHECK(grid.values.at4(0, 0, a, b) == doctest::Approx(4.0 * (1 - d / 10.0)));
    }
}

TEST_CASE("smp conv equals discrete conv with the sampled kernel") {
  Rng rng(43);
  ParamStore<double> ps(7);
  SMPConv<double> conv(ps, "smp", 2, 2, 6, 3, 1);
  auto x = Var<double>::constant(random_normal<double>({1, 2, 5, 5}, rng));
  auto y = conv.forward(x);
  // Oracle: brute-force sliding window with the sampled grid.
  auto kernel = conv.sampled_kernel().val();
  Tensor<double> ref({1, 2, 5, 5});
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t ho = 0; ho < 5; ++ho)
      for (int64_t wo = 0; wo < 5; ++wo) {
        double s = conv.bias.val()[c];
        for (int64_t i = 0; i < 3; ++i)
          for (int64_t j = 0; j < 3; ++j) {
            const int64_t h = ho - 1 + i, w = wo - 1 + j;
            if (h < 0 || h >= 5 || w < 0 || w >= 5) continue;
            s += kernel.at4(c, 0, i, j) * x.val().at4(0, c, h, w);
          }
        ref.at4(0, c, ho, wo) = s;
      }
  CHECK(max_abs_diff(y.val(), ref) < 1e-12);
}

TEST_CASE("zero kernel and pointwise kernel edge cases") {
  Rng rng(47);
  ParamStore<double> ps(11);
  SUBCASE("weights zero -> output zero") {
    SMPConv<double> conv(ps, "z", 3, 3, 5);
    conv.weights.val().zero();
    auto x = Var<double>::constant(random_normal<double>({2, 3, 4, 4}, rng));
    CHECK(conv.forward(x).val().abs_max() == 0.0);
  }
  SUBCASE("1x1 grid scales the input per channel") {
    SMPConv<double> conv(ps, "p", 2, 2, 4, /*k=*/1);
    auto x = Var<double>::constant(random_normal<double>({1, 2, 3, 3}, rng));
    auto y = conv.forward(x);
    auto kernel = conv.sampled_kernel().val();  // [2,1,1,1]
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t i = 0; i < 9; ++i)
        CHECK(y.val()[c * 9 + i] ==
              doctest::Approx(kernel[c] * x.val()[c * 9 + i] + conv.bias.val()[c]));
  }
}

TEST_CASE("smp block: residual passthrough and zero propagation") {
  ParamStore<double> ps(13);
  SMPBlock<double> blk(ps, "blk", 3, 3);
  Rng rng(51);
  SUBCASE("zero SMP weights -> activation(input)") {
    blk.conv1.weights.val().zero();
    blk.conv2.weights.val().zero();
    auto x = Var<double>::constant(random_normal<double>({1, 3, 4, 4}, rng));
    auto y = blk.forward(x);
    Tensor<double> expect(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
      const double v = x.val()[i];
      expect[i] = v / (1.0 + std::exp(-v));  // silu
    }
    CHECK(max_abs_diff(y.val(), expect) < 1e-12);
  }
  SUBCASE("zero input, zero-init norms -> zeros") {
    auto x = Var<double>::constant(Tensor<double>({1, 3, 4, 4}));
    CHECK(blk.forward(x).val().abs_max() == 0.0);
  }
}

TEST_CASE("smp block gradients match finite differences (p, w, r)") {
  Rng rng(53);
  ParamStore<double> ps(17);
  SMPBlock<double> blk(ps, "g", 2, 2, 5);
  // Replace random point geometry with boundary-safe draws.
  for (auto* conv : {&blk.conv1, &blk.conv2}) {
    auto prm = safe_random_params(rng, 5, 2, 3);
    conv->points.val() = prm.p;
    conv->weights.val() = prm.w;
    conv->radii.val() = prm.r;
  }
  auto x = Var<double>::constant(random_normal<double>({1, 2, 4, 4}, rng));
  auto loss = [&] { return ops::mean_all(ops::mul(blk.forward(x), blk.forward(x))); };
  std::vector<std::pair<std::string, Var<double>>> leaves;
  for (auto& [name, e] : ps.entries) leaves.emplace_back(name, e.var);
  auto res = check_gradients(loss, leaves);
  CHECK(res.max_rel_err < 1e-3);
  INFO(res.worst);
  CHECK(res.checked > 50);
}

TEST_CASE("adaptivity: moving a point only changes sites inside the old/new balls") {
  Rng rng(57);
  auto prm = safe_random_params(rng, 6, 1, 5);
  auto before = sample_kernel_grid(view(prm.p, prm.w, prm.r), 5, 1, 1);
  Tensor<double> p2 = prm.p;
  const int64_t moved = 2;
  p2.at2(moved, 0) += 0.31;
  p2.at2(moved, 1) -= 0.17;
  auto after = sample_kernel_grid(view(p2, prm.w, prm.r), 5, 1, 1);
  for (int64_t a = 0; a < 5; ++a)
    for (int64_t b = 0; b < 5; ++b) {
      const double x = before.coords.at3(a, b, 0), y = before.coords.at3(a, b, 1);
      const double d_old = std::abs(x - prm.p.at2(moved, 0)) + std::abs(y - prm.p.at2(moved, 1));
      const double d_new = std::abs(x - p2.at2(moved, 0)) + std::abs(y - p2.at2(moved, 1));
      const bool inside_union = d_old < prm.r[moved] || d_new < prm.r[moved];
      if (!inside_union)
        CHECK(before.values.at4(0, 0, a, b) == after.values.at4(0, 0, a, b));
    }
}

TEST_CASE("radii stay above r_min after an optimizer step") {
  ParamStore<double> ps(19);
  SMPConv<double> conv(ps, "c", 2, 2, 4);
  conv.radii.val().fill(0.011);
  Rng rng(61);
  auto x = Var<double>::constant(random_normal<double>({1, 2, 4, 4}, rng));
  ps.zero_grads();
  auto loss = ops::sum_all(conv.forward(x));
  backward(loss);
  AdamW<double> opt;
  opt.lr = 0.5;  // large step to force a violation
  opt.step(ps);
  conv.clamp_radii();
  for (int64_t i = 0; i < conv.radii.numel(); ++i) CHECK(conv.radii.val()[i] >= 1e-2);
}

TEST_CASE("radar backbone output matches the vision stem stride") {
  ParamStore<float> ps(23);
  RadarBackbone<float> bb(ps, "radar", 32, 2, true);
  SUBCASE("zero REVP map gives finite output at 32x32 for a 128x128 input") {
    auto zero = Var<float>::constant(Tensor<float>({1, 4, 128, 128}));
    auto y = bb.forward(zero);
    CHECK(y.dim(1) == 32);
    CHECK(y.dim(2) == 32);
    CHECK(y.dim(3) == 32);
    CHECK(y.val().all_finite());
  }
  SUBCASE("stride arithmetic at 64x64") {
    auto x = Var<float>::constant(Tensor<float>({2, 4, 64, 64}));
    auto y = bb.forward(x);
    CHECK(y.dim(2) == 16);
    CHECK(y.dim(3) == 16);
  }
  SUBCASE("basic-block variant matches shapes") {
    ParamStore<float> ps2(29);
    RadarBackbone<float> bb2(ps2, "radar", 32, 2, false);
    auto x = Var<float>::constant(Tensor<float>({1, 4, 64, 64}));
    CHECK(bb2.forward(x).dim(2) == 16);
  }
}

TEST_CASE("radar backbone stride arithmetic at 640") {
  ParamStore<float> ps(97);
  RadarBackbone<float> bb(ps, "radar", 32, 2, true);
  auto y = bb.forward(Var<float>::constant(Tensor<float>({1, 4, 640, 640})));
  CHECK(y.dim(2) == 160);
  CHECK(y.dim(3) == 160);
}
