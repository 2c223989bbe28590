#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fusedet/core/gemm.hpp"
#include "fusedet/core/nn.hpp"
#include "fusedet/core/optim.hpp"
#include "fusedet/core/ops.hpp"
#include "gradcheck.hpp"

using namespace fusedet;
using fusedet::testing::check_gradients;

namespace {

// Naive triple-loop reference for GEMM.
template <class T>
void gemm_ref(bool tA, bool tB, int64_t M, int64_t N, int64_t K, const T* A, int64_t lda,
              const T* B, int64_t ldb, T* C, int64_t ldc) {
  for (int64_t m = 0; m < M; ++m)
    for (int64_t n = 0; n < N; ++n) {
      T s = 0;
      for (int64_t k = 0; k < K; ++k) {
        const T a = tA ? A[k * lda + m] : A[m * lda + k];
        const T b = tB ? B[n * ldb + k] : B[k * ldb + n];
        s += a * b;
      }
      C[m * ldc + n] += s;
    }
}

// Direct sliding-window convolution (independent of im2col/GEMM path).
template <class T>
Tensor<T> conv_ref(const Tensor<T>& x, const Tensor<T>& w, const T* bias, int64_t stride,
                   int64_t pad, PadMode mode, int64_t groups) {
  const int64_t B = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = w.dim(0), Cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int64_t Ho = conv_out_size(H, kh, stride, pad), Wo = conv_out_size(W, kw, stride, pad);
  const int64_t Mg = Cout / groups;
  Tensor<T> y({B, Cout, Ho, Wo});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t co = 0; co < Cout; ++co) {
      const int64_t g = co / Mg;
      for (int64_t ho = 0; ho < Ho; ++ho)
        for (int64_t wo = 0; wo < Wo; ++wo) {
          T s = bias ? bias[co] : T(0);
          for (int64_t ci = 0; ci < Cg; ++ci)
            for (int64_t i = 0; i < kh; ++i)
              for (int64_t j = 0; j < kw; ++j) {
                int64_t h = ho * stride - pad + i, ww = wo * stride - pad + j;
                if (h < 0 || h >= H || ww < 0 || ww >= W) {
                  if (mode == PadMode::Zero) continue;
                  h = h < 0 ? -h : (h >= H ? 2 * H - 2 - h : h);
                  ww = ww < 0 ? -ww : (ww >= W ? 2 * W - 2 - ww : ww);
                }
                s += w.at4(co, ci, i, j) * x.at4(b, g * Cg + ci, h, ww);
              }
          y.at4(b, co, ho, wo) = s;
        }
    }
  return y;
}

}  // namespace

TEST_CASE("gemm matches naive reference for all transpose combos") {
  Rng rng(7);
  for (int nthreads : {1, 2}) {
    set_num_threads(nthreads);
    for (auto [M, N, K] : {std::tuple<int64_t, int64_t, int64_t>{5, 33, 9},
                           {17, 64, 31},
                           {1, 130, 3},
                           {40, 7, 25}}) {
      for (bool tA : {false, true})
        for (bool tB : {false, true}) {
          auto A = random_normal<double>({tA ? K : M, tA ? M : K}, rng);
          auto B = random_normal<double>({tB ? N : K, tB ? K : N}, rng);
          Tensor<double> C({M, N}), Cref({M, N});
          gemm<double>(tA, tB, M, N, K, 1.0, A.ptr(), A.dim(1), B.ptr(), B.dim(1), 0.0, C.ptr(), N);
          gemm_ref<double>(tA, tB, M, N, K, A.ptr(), A.dim(1), B.ptr(), B.dim(1), Cref.ptr(), N);
          CHECK(max_abs_diff(C, Cref) < 1e-10);
        }
    }
  }
  set_num_threads(1);
}

TEST_CASE("conv2d forward matches direct sliding window") {
  Rng rng(11);
  struct Cfg {
    int64_t B, C, H, W, Cout, k, stride, pad, groups;
    PadMode mode;
  };
  for (const Cfg& c : {Cfg{2, 3, 7, 9, 5, 3, 1, 1, 1, PadMode::Zero},
                       Cfg{1, 4, 8, 8, 6, 3, 2, 1, 2, PadMode::Zero},
                       Cfg{2, 3, 6, 5, 3, 3, 1, 1, 3, PadMode::Zero},
                       Cfg{1, 1, 5, 5, 1, 3, 1, 1, 1, PadMode::Reflect},
                       Cfg{2, 2, 9, 7, 4, 1, 1, 0, 1, PadMode::Zero},
                       Cfg{1, 5, 10, 10, 5, 5, 2, 2, 5, PadMode::Zero}}) {
    auto x = random_normal<double>({c.B, c.C, c.H, c.W}, rng);
    auto w = random_normal<double>({c.Cout, c.C / c.groups, c.k, c.k}, rng);
    auto b = random_normal<double>({c.Cout}, rng);
    auto y = conv2d_fwd(x, w, b.ptr(), c.stride, c.pad, c.mode, c.groups);
    auto yref = conv_ref(x, w, b.ptr(), c.stride, c.pad, c.mode, c.groups);
    CHECK(max_abs_diff(y, yref) < 1e-10);
  }
}

TEST_CASE("elementwise and reduction op gradients match finite differences") {
  Rng rng(3);
  auto x = Var<double>::leaf(random_normal<double>({4, 5}, rng));
  auto y = Var<double>::leaf(random_normal<double>({4, 5}, rng));

  auto loss = [&] {
    using namespace ops;
    Var<double> a = mul(sigmoid(x), silu(y));
    Var<double> b = add(abs_op(sub(x, y)), emax(x, y));
    Var<double> c = emin(scale(x, 1.7), add_const(y, 0.3));
    return sum_all(mul(add(a, b), sigmoid(c)));
  };
  auto res = check_gradients(loss, {{"x", x}, {"y", y}});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("conv2d gradients (x, w, b) match finite differences") {
  Rng rng(5);
  for (auto [groups, mode] : {std::pair<int64_t, PadMode>{1, PadMode::Zero},
                              {2, PadMode::Zero},
                              {1, PadMode::Reflect},
                              {4, PadMode::Zero}}) {
    auto x = Var<double>::leaf(random_normal<double>({2, 4, 6, 5}, rng));
    auto w = Var<double>::leaf(random_normal<double>({4, 4 / groups, 3, 3}, rng, 0, 0.5));
    auto b = Var<double>::leaf(random_normal<double>({4}, rng));
    auto loss = [&, mode = mode, groups = groups] {
      return ops::sum_all(ops::silu(ops::conv2d(x, w, b, 1, 1, mode, groups)));
    };
    auto res = check_gradients(loss, {{"x", x}, {"w", w}, {"b", b}});
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("pool / resize / norm gradients match finite differences") {
  Rng rng(9);
  auto x = Var<double>::leaf(random_normal<double>({2, 4, 6, 6}, rng));
  auto g = Var<double>::leaf(random_normal<double>({4}, rng, 1.0, 0.2));
  auto b = Var<double>::leaf(random_normal<double>({4}, rng));

  SUBCASE("maxpool") {
    auto loss = [&] { return ops::sum_all(ops::silu(ops::maxpool2d(x, 2, 2))); };
    CHECK(check_gradients(loss, {{"x", x}}).max_rel_err < 1e-6);
  }
  SUBCASE("maxpool ceil") {
    auto x5 = Var<double>::leaf(random_normal<double>({1, 2, 5, 5}, rng));
    auto loss = [&] { return ops::sum_all(ops::maxpool2d(x5, 2, 2, true)); };
    CHECK(check_gradients(loss, {{"x5", x5}}).max_rel_err < 1e-6);
  }
  SUBCASE("bilinear_up2") {
    auto loss = [&] { return ops::sum_all(ops::silu(ops::bilinear_up2(x))); };
    CHECK(check_gradients(loss, {{"x", x}}).max_rel_err < 1e-6);
  }
  SUBCASE("nearest_resize") {
    auto loss = [&] { return ops::sum_all(ops::silu(ops::nearest_resize(x, 9, 4))); };
    CHECK(check_gradients(loss, {{"x", x}}).max_rel_err < 1e-6);
  }
  SUBCASE("groupnorm") {
    auto loss = [&] { return ops::sum_all(ops::silu(ops::groupnorm(x, 2, g, b))); };
    CHECK(check_gradients(loss, {{"x", x}, {"g", g}, {"b", b}}).max_rel_err < 1e-5);
  }
  SUBCASE("global_avg_pool") {
    auto loss = [&] { return ops::sum_all(ops::sigmoid(ops::global_avg_pool(x))); };
    CHECK(check_gradients(loss, {{"x", x}}).max_rel_err < 1e-6);
  }
}

TEST_CASE("matmul / softmax / layernorm / attention gradients") {
  Rng rng(13);
  auto a = Var<double>::leaf(random_normal<double>({5, 7}, rng));
  auto bm = Var<double>::leaf(random_normal<double>({7, 6}, rng));
  auto bt = Var<double>::leaf(random_normal<double>({6, 7}, rng));

  SUBCASE("matmul") {
    auto loss = [&] { return ops::sum_all(ops::silu(ops::matmul(a, bm))); };
    CHECK(check_gradients(loss, {{"a", a}, {"b", bm}}).max_rel_err < 1e-6);
  }
  SUBCASE("matmul transB") {
    auto loss = [&] { return ops::sum_all(ops::silu(ops::matmul(a, bt, true))); };
    CHECK(check_gradients(loss, {{"a", a}, {"b", bt}}).max_rel_err < 1e-6);
  }
  SUBCASE("softmax") {
    auto loss = [&] { return ops::sum_all(ops::mul(ops::softmax_rows(a), a)); };
    CHECK(check_gradients(loss, {{"a", a}}).max_rel_err < 1e-6);
  }
  SUBCASE("layernorm") {
    auto g = Var<double>::leaf(random_normal<double>({7}, rng, 1.0, 0.1));
    auto b = Var<double>::leaf(random_normal<double>({7}, rng));
    auto loss = [&] { return ops::sum_all(ops::silu(ops::layernorm_rows(a, g, b))); };
    CHECK(check_gradients(loss, {{"a", a}, {"g", g}, {"b", b}}).max_rel_err < 1e-5);
  }
  SUBCASE("multihead attention") {
    ParamStore<double> ps(21);
    nn::MultiheadAttention<double> mha(ps, "mha", 8, 2);
    auto q = Var<double>::leaf(random_normal<double>({3, 8}, rng));
    auto kv = Var<double>::leaf(random_normal<double>({5, 8}, rng));
    auto loss = [&] { return ops::sum_all(ops::silu(mha.forward(q, kv, kv))); };
    std::vector<std::pair<std::string, Var<double>>> leaves = {{"q", q}, {"kv", kv}};
    for (auto& [name, e] : ps.entries) leaves.emplace_back(name, e.var);
    CHECK(check_gradients(loss, leaves).max_rel_err < 1e-5);
  }
}

TEST_CASE("structural op gradients and round trips") {
  Rng rng(17);
  auto x = Var<double>::leaf(random_normal<double>({2, 3, 4, 5}, rng));

  SUBCASE("flatten/unflatten round trip is exact") {
    auto t = ops::flatten_tokens(x);
    auto back = ops::unflatten_tokens(t, 3, 4, 5);
    CHECK(max_abs_diff(back.val(), x.val()) == 0.0);
  }
  SUBCASE("concat/slice channel grads") {
    auto y = Var<double>::leaf(random_normal<double>({2, 2, 4, 5}, rng));
    auto loss = [&] {
      auto c = ops::concat_ch<double>({x, y});
      return ops::sum_all(ops::silu(ops::slice_ch(c, 1, 4)));
    };
    CHECK(check_gradients(loss, {{"x", x}, {"y", y}}).max_rel_err < 1e-6);
  }
  SUBCASE("token + gather grads") {
    auto loss = [&] {
      auto t = ops::flatten_tokens(x);            // [2, 20, 3]
      auto s = ops::select_batch(t, 1);           // [20, 3]
      auto r = ops::select_rows(s, {0, 5, 5, 19});  // repeated row exercises scatter-add
      return ops::sum_all(ops::silu(r));
    };
    CHECK(check_gradients(loss, {{"x", x}}).max_rel_err < 1e-6);
  }
  SUBCASE("bce with logits") {
    Rng r2(23);
    auto t = random_uniform<double>({2, 3, 4, 5}, r2);
    auto loss = [&] { return ops::bce_with_logits_sum(x, t); };
    CHECK(check_gradients(loss, {{"x", x}}).max_rel_err < 1e-6);
  }
  SUBCASE("mul_channel / mul_spatial grads") {
    auto gate = Var<double>::leaf(random_normal<double>({2, 3, 1, 1}, rng));
    auto mask = Var<double>::leaf(random_normal<double>({2, 1, 4, 5}, rng));
    auto loss = [&] {
      return ops::sum_all(ops::silu(ops::mul_spatial(ops::mul_channel(x, gate), mask)));
    };
    CHECK(check_gradients(loss, {{"x", x}, {"gate", gate}, {"mask", mask}}).max_rel_err < 5e-6);
  }
}

TEST_CASE("AdamW takes a deterministic descent step and clips gradients") {
  ParamStore<double> ps(1);
  auto w = ps.add("w", Tensor<double>::full({4}, 2.0));
  auto run = [&] {
    auto loss = ops::sum_all(ops::mul(w, w));
    backward(loss);
  };
  AdamW<double> opt;
  opt.lr = 0.1;
  ps.zero_grads();
  run();
  const double norm = opt.clip_global_norm(ps, 0.1);
  CHECK(norm == doctest::Approx(std::sqrt(4 * 16.0)));
  double gnorm = 0;
  for (int i = 0; i < 4; ++i) gnorm += w.grad()[i] * w.grad()[i];
  CHECK(std::sqrt(gnorm) == doctest::Approx(0.1));
  opt.step(ps);
  CHECK(w.val()[0] < 2.0);
}
