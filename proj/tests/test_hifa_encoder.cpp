#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fusedet/enc/encoder.hpp"
#include "gradcheck.hpp"

using namespace fusedet;
using namespace fusedet::enc;
using fusedet::testing::check_gradients;

TEST_CASE("scale_align: size arithmetic, constants, identity projections") {
  ParamStore<double> ps(3);
  ScaleAlign<double> align(ps, "al", 4, 4, 4, 4);
  Rng rng(5);

  SUBCASE("mid 8x8 -> low upsampled, high downsampled") {
    auto lo = Var<double>::constant(random_normal<double>({1, 4, 4, 4}, rng));
    auto mi = Var<double>::constant(random_normal<double>({1, 4, 8, 8}, rng));
    auto hi = Var<double>::constant(random_normal<double>({1, 4, 16, 16}, rng));
    auto t = align.forward(lo, mi, hi);
    CHECK(t.low.dim(2) == 8);
    CHECK(t.mid.dim(2) == 8);
    CHECK(t.high.dim(2) == 8);
  }
  SUBCASE("non-adjacent scales rejected") {
    auto lo = Var<double>::constant(Tensor<double>({1, 4, 8, 8}));
    auto mi = Var<double>::constant(Tensor<double>({1, 4, 8, 8}));
    auto hi = Var<double>::constant(Tensor<double>({1, 4, 16, 16}));
    CHECK_THROWS_AS(align.forward(lo, mi, hi), ShapeError);
  }
  SUBCASE("identity 1x1 on a constant low map stays constant") {
    // identity projection: w = I, b = 0
    align.low_proj.w.val().zero();
    align.low_proj.b.val().zero();
    for (int64_t c = 0; c < 4; ++c) align.low_proj.w.val().at4(c, c, 0, 0) = 1.0;
    auto lo = Var<double>::constant(Tensor<double>({1, 4, 4, 4}, 2.75));
    auto mi = Var<double>::constant(Tensor<double>({1, 4, 8, 8}));
    auto hi = Var<double>::constant(Tensor<double>({1, 4, 16, 16}));
    auto t = align.forward(lo, mi, hi);
    for (int64_t i = 0; i < t.low.numel(); ++i) CHECK(t.low.val()[i] == doctest::Approx(2.75));
  }
}

TEST_CASE("hifa fuse: gate saturation, midpoint, oracle, interval bound") {
  ParamStore<double> ps(7);
  HifaFuse<double> fuse(ps, "hf", 6, 3);
  Rng rng(9);
  const Shape s{2, 6, 4, 4};

  auto triple = [&](Tensor<double> lo, Tensor<double> mi, Tensor<double> hi) {
    return ScaleTriple<double>{Var<double>::constant(std::move(lo)),
                               Var<double>::constant(std::move(mi)),
                               Var<double>::constant(std::move(hi))};
  };

  SUBCASE("large positive mid selects high") {
    auto t = triple(random_normal<double>(s, rng), Tensor<double>(s, 100.0),
                    random_normal<double>(s, rng));
    auto f = fuse.fuse_chunks(t);
    CHECK(max_abs_diff(f.val(), t.high.val()) < 1e-12);
  }
  SUBCASE("zero mid averages low and high") {
    auto t = triple(random_normal<double>(s, rng), Tensor<double>(s),
                    random_normal<double>(s, rng));
    auto f = fuse.fuse_chunks(t);
    for (int64_t i = 0; i < f.numel(); ++i)
      CHECK(f.val()[i] == doctest::Approx(0.5 * (t.low.val()[i] + t.high.val()[i])));
  }
  SUBCASE("elementwise oracle and closed-interval bound") {
    auto t = triple(random_normal<double>(s, rng), random_normal<double>(s, rng),
                    random_normal<double>(s, rng));
    auto f = fuse.fuse_chunks(t);
    for (int64_t i = 0; i < f.numel(); ++i) {
      const double lo = t.low.val()[i], mi = t.mid.val()[i], hi = t.high.val()[i];
      const double sig = 1.0 / (1.0 + std::exp(-mi));
      CHECK(f.val()[i] == doctest::Approx(sig * hi + (1 - sig) * lo));
      CHECK(f.val()[i] >= std::min(lo, hi));
      CHECK(f.val()[i] <= std::max(lo, hi));
    }
  }
  SUBCASE("swapping the low/high labels changes the result") {
    auto lo = random_normal<double>(s, rng);
    auto mi = random_normal<double>(s, rng);
    auto hi = random_normal<double>(s, rng);
    auto f1 = fuse.fuse_chunks(triple(lo, mi, hi));
    auto f2 = fuse.fuse_chunks(triple(hi, mi, lo));
    CHECK(max_abs_diff(f1.val(), f2.val()) > 1e-9);
  }
  SUBCASE("width not divisible by K is a configuration error") {
    ParamStore<double> ps2(11);
    CHECK_THROWS_AS(HifaFuse<double>(ps2, "bad", 10, 3), ConfigError);
  }
}

TEST_CASE("encoder: desk token count, round trip, flags, finiteness") {
  ParamStore<float> ps(13);
  HybridEncoder<float> enc(ps, "enc", 64, 128, 256, 48, true);
  Rng rng(15);
  vision::PyramidFeatures<float> pyr{
      Var<float>::constant(random_normal<float>({2, 64, 16, 16}, rng, 0, 0.5)),
      Var<float>::constant(random_normal<float>({2, 128, 8, 8}, rng, 0, 0.5)),
      Var<float>::constant(random_normal<float>({2, 256, 4, 4}, rng, 0, 0.5))};
  auto mem = enc.forward(pyr);
  CHECK(mem.token_count() == 16 * 16 + 8 * 8 + 4 * 4);  // 336
  CHECK(mem.tokens.dim(0) == 2);
  CHECK(mem.tokens.dim(2) == 48);
  CHECK(static_cast<int64_t>(mem.level_id.size()) == 336);
  CHECK(mem.tokens.val().all_finite());

  SUBCASE("token positions lie in [0,1]^2 and round trip to the refined maps") {
    for (int64_t t = 0; t < 336; ++t) {
      CHECK(mem.positions.at2(t, 0) > 0.0);
      CHECK(mem.positions.at2(t, 0) < 1.0);
      CHECK(mem.positions.at2(t, 1) > 0.0);
      CHECK(mem.positions.at2(t, 1) < 1.0);
    }
    int64_t off = 0;
    for (int lvl = 0; lvl < 3; ++lvl) {
      const auto [H, W] = mem.level_hw[static_cast<size_t>(lvl)];
      const auto& ref = mem.refined[static_cast<size_t>(lvl)];
      for (int64_t b = 0; b < 2; ++b)
        for (int64_t c = 0; c < 48; ++c)
          for (int64_t i = 0; i < H * W; ++i)
            CHECK(mem.tokens.val().at3(b, off + i, c) == ref.val().at4(b, c, i / W, i % W));
      off += H * W;
    }
  }
  SUBCASE("hifa=off reduces to the plain merge and changes the output") {
    HybridEncoder<float>& e2 = enc;
    e2.hifa_enabled = false;
    auto mem2 = e2.forward(pyr);
    CHECK(mem2.token_count() == 336);
    CHECK(max_abs_diff(mem.tokens.val(), mem2.tokens.val()) > 0.0);
  }
  SUBCASE("zero pyramids give finite memory") {
    vision::PyramidFeatures<float> zp{Var<float>::constant(Tensor<float>({1, 64, 16, 16})),
                                      Var<float>::constant(Tensor<float>({1, 128, 8, 8})),
                                      Var<float>::constant(Tensor<float>({1, 256, 4, 4}))};
    CHECK(enc.forward(zp).tokens.val().all_finite());
  }
}

TEST_CASE("gradients flow to all three scales through the encoder") {
  ParamStore<double> ps(17);
  HybridEncoder<double> enc(ps, "enc", 4, 4, 4, 6, true);
  Rng rng(19);
  auto p3 = Var<double>::leaf(random_normal<double>({1, 4, 8, 8}, rng));
  auto p4 = Var<double>::leaf(random_normal<double>({1, 4, 4, 4}, rng));
  auto p5 = Var<double>::leaf(random_normal<double>({1, 4, 2, 2}, rng));
  auto loss = [&] {
    auto mem = enc.forward({p3, p4, p5});
    return ops::mean_all(ops::mul(mem.tokens, mem.tokens));
  };
  auto res = check_gradients(loss, {{"p3", p3}, {"p4", p4}, {"p5", p5}}, 1e-4, 16);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-3);
  // nonzero gradient reached every scale
  ps.zero_grads();
  p3.zero_grad();
  p4.zero_grad();
  p5.zero_grad();
  backward(loss());
  CHECK(p3.grad().abs_max() > 0.0);
  CHECK(p4.grad().abs_max() > 0.0);
  CHECK(p5.grad().abs_max() > 0.0);
}
