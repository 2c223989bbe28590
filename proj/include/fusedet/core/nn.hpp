#pragma once

#include <map>
#include <string>
#include <vector>

#include "fusedet/core/ops.hpp"

namespace fusedet {

// Named leaf-parameter registry. Names are stable and key both the
// checkpoint format and the per-parameter init stream, so neither
// construction order nor module layout changes affect initialization.
template <class T>
struct ParamStore {
  struct Entry {
    Var<T> var;
    bool decay = true;  // weight-decay eligibility
  };

  uint64_t seed = 0;
  std::map<std::string, Entry> entries;

  explicit ParamStore(uint64_t init_seed = 0) : seed(init_seed) {}

  Var<T> add(const std::string& name, Tensor<T> init, bool decay = true) {
    check(!entries.count(name), "duplicate parameter name: " + name);
    Var<T> v = Var<T>::leaf(std::move(init));
    entries[name] = Entry{v, decay};
    return v;
  }

  Rng init_rng(const std::string& name) const { return Rng(seed).fork(name); }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [k, e] : entries) n += e.var.node_->val.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [k, e] : entries) e.var.zero_grad();
  }

  Var<T>* find(const std::string& name) {
    auto it = entries.find(name);
    return it == entries.end() ? nullptr : &it->second.var;
  }
};

namespace nn {

enum class Init { Default, Zero };

template <class T>
Tensor<T> uniform_init(const Shape& s, double bound, Rng rng) {
  Tensor<T> t(s);
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
struct Conv2d {
  Var<T> w, b;
  int64_t stride = 1, pad = 0, groups = 1;
  PadMode mode = PadMode::Zero;

  Conv2d() = default;
  Conv2d(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout, int64_t k,
         int64_t stride_ = 1, int64_t pad_ = -1, PadMode mode_ = PadMode::Zero,
         int64_t groups_ = 1, bool bias = true, Init init = Init::Default)
      : stride(stride_), pad(pad_ < 0 ? k / 2 : pad_), groups(groups_), mode(mode_) {
    const int64_t fan_in = (cin / groups) * k * k;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor<T> wt = init == Init::Zero
                       ? Tensor<T>({cout, cin / groups, k, k})
                       : uniform_init<T>({cout, cin / groups, k, k}, bound, ps.init_rng(name + ".w"));
    w = ps.add(name + ".w", std::move(wt), true);
    if (bias) {
      Tensor<T> bt = init == Init::Zero ? Tensor<T>({cout})
                                        : uniform_init<T>({cout}, bound, ps.init_rng(name + ".b"));
      b = ps.add(name + ".b", std::move(bt), false);
    }
  }

  Var<T> forward(const Var<T>& x) const { return ops::conv2d(x, w, b, stride, pad, mode, groups); }
};

template <class T>
struct Linear {
  Var<T> w, b;  // w: [in, out]

  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& name, int64_t in, int64_t out, bool bias = true,
         Init init = Init::Default) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Tensor<T> wt = init == Init::Zero ? Tensor<T>({in, out})
                                      : uniform_init<T>({in, out}, bound, ps.init_rng(name + ".w"));
    w = ps.add(name + ".w", std::move(wt), true);
    if (bias) {
      Tensor<T> bt = init == Init::Zero ? Tensor<T>({out})
                                        : uniform_init<T>({out}, bound, ps.init_rng(name + ".b"));
      b = ps.add(name + ".b", std::move(bt), false);
    }
  }

  // x: [M, in] -> [M, out]
  Var<T> forward(const Var<T>& x) const {
    Var<T> y = ops::matmul(x, w);
    return b.defined() ? ops::add_rowvec(y, b) : y;
  }
};

template <class T>
struct GroupNorm {
  Var<T> gain, bias;
  int64_t groups = 8;
  T eps = T(1e-5);

  GroupNorm() = default;
  // gain_init = 0 gives an identity-at-init residual branch.
  GroupNorm(ParamStore<T>& ps, const std::string& name, int64_t channels, int64_t groups_ = 8,
            T gain_init = T(1)) {
    groups = groups_;
    while (channels % groups != 0) --groups;  // largest divisor <= requested
    gain = ps.add(name + ".g", Tensor<T>::full({channels}, gain_init), false);
    bias = ps.add(name + ".b", Tensor<T>({channels}), false);
  }

  Var<T> forward(const Var<T>& x) const { return ops::groupnorm(x, groups, gain, bias, eps); }
};

template <class T>
struct LayerNorm {
  Var<T> gain, bias;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& ps, const std::string& name, int64_t dim) {
    gain = ps.add(name + ".g", Tensor<T>::full({dim}, T(1)), false);
    bias = ps.add(name + ".b", Tensor<T>({dim}), false);
  }

  Var<T> forward(const Var<T>& x) const { return ops::layernorm_rows(x, gain, bias); }
};

// Dense multi-head attention on per-sample token matrices.
template <class T>
struct MultiheadAttention {
  Linear<T> q_proj, k_proj, v_proj, out_proj;
  int64_t dim = 0, heads = 1;

  MultiheadAttention() = default;
  MultiheadAttention(ParamStore<T>& ps, const std::string& name, int64_t dim_, int64_t heads_)
      : q_proj(ps, name + ".q", dim_, dim_),
        k_proj(ps, name + ".k", dim_, dim_),
        v_proj(ps, name + ".v", dim_, dim_),
        out_proj(ps, name + ".o", dim_, dim_),
        dim(dim_),
        heads(heads_) {
    check_config(dim_ % heads_ == 0, "attention dim not divisible by heads");
  }

  // q: [Lq, D]; k,v: [Lk, D]. Positional terms are added by the caller.
  Var<T> forward(const Var<T>& q, const Var<T>& k, const Var<T>& v) const {
    const int64_t dh = dim / heads;
    const T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    Var<T> qp = q_proj.forward(q), kp = k_proj.forward(k), vp = v_proj.forward(v);
    std::vector<Var<T>> ctx;
    ctx.reserve(heads);
    for (int64_t h = 0; h < heads; ++h) {
      Var<T> qh = ops::slice_cols(qp, h * dh, (h + 1) * dh);
      Var<T> kh = ops::slice_cols(kp, h * dh, (h + 1) * dh);
      Var<T> vh = ops::slice_cols(vp, h * dh, (h + 1) * dh);
      Var<T> attn = ops::softmax_rows(ops::scale(ops::matmul(qh, kh, /*transB=*/true), sc));
      ctx.push_back(ops::matmul(attn, vh));
    }
    return out_proj.forward(ops::concat_cols(ctx));
  }
};

}  // namespace nn
}  // namespace fusedet
