// Copyright 2026 DCIM-AVSR Authors
// Block-level checks: attention oracle, masking opacity, length bookkeeping
//
// Licensed under the Apache License, Version 2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dcim/conformer.hpp"
#include "test_util.hpp"

using namespace dcim;
using namespace dcim::testutil;

namespace {

ConformerBlockConfig toy_cfg(int64_t dim = 8, int heads = 2, int kernel = 3) {
  ConformerBlockConfig cfg;
  cfg.dim = dim;
  cfg.n_heads = heads;
  cfg.conv_kernel = kernel;
  cfg.ff_expansion = 2;
  return cfg;
}

const FwdCtx kEval{};

}  // namespace

TEST_CASE("feed-forward module") {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(31);
  FeedForwardModule ffm;
  ffm.init(6, 2, 0.0, rng);

  SUBCASE("zero parameters leave only the residual path") {
    ffm.lin1.init_zero(6, 12);
    ffm.lin2.init_zero(12, 6);
    Tensor x = Tensor::uniform({4, 6}, rng, -1, 1);
    CHECK(bitwise_equal(ffm.forward(x, kEval), x));
  }

  SUBCASE("shape preserved for any length") {
    for (int64_t t : {1, 3, 9}) {
      Tensor x = Tensor::uniform({t, 6}, rng, -1, 1);
      CHECK(ffm.forward(x, kEval).shape() == x.shape());
    }
  }

  SUBCASE("gradient check") {
    Tensor x = Tensor::uniform({4, 6}, rng, -1, 1);
    Tensor proj = Tensor::uniform({4, 6}, rng, -1, 1);
    std::vector<Tensor*> slots = {&x, &ffm.lin1.w, &ffm.lin2.w, &ffm.norm.gain};
    auto forward_value = [&]() { return sum(mul(ffm.forward(x, kEval), proj)).flat(0); };
    auto analytic = [&]() {
      Tape tape;
      for (Tensor* s : slots) *s = tape.watch(*s);
      GradMap gm = tape.backward(sum(mul(ffm.forward(x, kEval), proj)));
      std::vector<Tensor> g;
      for (Tensor* s : slots) {
        g.push_back(gm.grad_of(*s));
        *s = s->detached();
      }
      return g;
    };
    CHECK(finite_diff_check(slots, forward_value, analytic).max_ratio <= 1.0);
  }
}

TEST_CASE("attention against a hand-rolled oracle") {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(32);
  ConformerBlockConfig cfg = toy_cfg(4, 2);
  AttentionModule att;
  att.init(cfg, /*pre_norm=*/false, rng);
  // nonzero biases so the oracle exercises them
  att.u = Tensor::uniform({2, 2}, rng, -0.3, 0.3);
  att.v = Tensor::uniform({2, 2}, rng, -0.3, 0.3);

  const int64_t T = 3, D = 4, H = 2, hd = 2;
  Tensor x = Tensor::uniform({T, D}, rng, -1, 1);
  Tensor got = att.forward(x, nullptr, kEval);

  // independent reimplementation with plain loops
  auto lin_at = [&](const LinearLayer& l, int64_t t, int64_t o) {
    double acc = l.b.flat(o);
    for (int64_t i = 0; i < D; ++i) acc += x.at({t, i}) * l.w.at({i, o});
    return acc;
  };
  Tensor rel_tab = relative_sinusoid_table(T, D);
  std::vector<std::vector<double>> relp(static_cast<size_t>(2 * T - 1), std::vector<double>(static_cast<size_t>(D)));
  for (int64_t p = 0; p < 2 * T - 1; ++p) {
    for (int64_t o = 0; o < D; ++o) {
      double acc = 0.0;
      for (int64_t i = 0; i < D; ++i) acc += rel_tab.at({p, i}) * att.wr.at({i, o});
      relp[static_cast<size_t>(p)][static_cast<size_t>(o)] = acc;
    }
  }
  std::vector<double> out_ref(static_cast<size_t>(T * D), 0.0);
  std::vector<std::vector<double>> ctxv(static_cast<size_t>(T), std::vector<double>(static_cast<size_t>(D)));
  for (int64_t h = 0; h < H; ++h) {
    for (int64_t i = 0; i < T; ++i) {
      std::vector<double> scores(static_cast<size_t>(T));
      for (int64_t j = 0; j < T; ++j) {
        double content = 0.0, pos = 0.0;
        for (int64_t d = 0; d < hd; ++d) {
          const double qv = lin_at(att.wq, i, h * hd + d) + att.u.at({h, d});
          const double qp = lin_at(att.wq, i, h * hd + d) + att.v.at({h, d});
          content += qv * lin_at(att.wk, j, h * hd + d);
          pos += qp * relp[static_cast<size_t>(T - 1 + i - j)][static_cast<size_t>(h * hd + d)];
        }
        scores[static_cast<size_t>(j)] = (content + pos) / std::sqrt(static_cast<double>(hd));
      }
      double mx = scores[0];
      for (double s : scores) mx = std::max(mx, s);
      double denom = 0.0;
      for (double s : scores) denom += std::exp(s - mx);
      for (int64_t d = 0; d < hd; ++d) {
        double acc = 0.0;
        for (int64_t j = 0; j < T; ++j) {
          acc += std::exp(scores[static_cast<size_t>(j)] - mx) / denom * lin_at(att.wv, j, h * hd + d);
        }
        ctxv[static_cast<size_t>(i)][static_cast<size_t>(h * hd + d)] = acc;
      }
    }
  }
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t o = 0; o < D; ++o) {
      double acc = att.wo.b.flat(o);
      for (int64_t i = 0; i < D; ++i) acc += ctxv[static_cast<size_t>(t)][static_cast<size_t>(i)] * att.wo.w.at({i, o});
      out_ref[static_cast<size_t>(t * D + o)] = acc + x.at({t, o});
    }
  }
  CHECK(max_abs_diff(got, Tensor::from({T, D}, out_ref)) <= 1e-12);
}

TEST_CASE("attention behavior") {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(33);
  ConformerBlockConfig cfg = toy_cfg(8, 2);

  SUBCASE("single position reduces to the value projection plus residual") {
    AttentionModule att;
    att.init(cfg, true, rng);
    Tensor x = Tensor::uniform({1, 8}, rng, -1, 1);
    Tensor y = att.forward(x, nullptr, kEval);
    Tensor expected = add(x, att.wo.apply(att.wv.apply(att.norm.apply(x))));
    CHECK(max_abs_diff(y, expected) <= 1e-12);
  }

  SUBCASE("probability rows sum to 1 and masked keys get exactly 0") {
    AttentionModule att;
    att.init(cfg, true, rng);
    Tensor x = Tensor::uniform({5, 8}, rng, -1, 1);
    Tensor mask = Tensor::from({5}, {0, 0, 1, 0, 1});
    Tensor probs;
    att.forward(x, &mask, kEval, &probs);
    for (int64_t h = 0; h < 2; ++h) {
      for (int64_t q = 0; q < 5; ++q) {
        double row = 0.0;
        for (int64_t k = 0; k < 5; ++k) {
          const double p = probs.at({h, q, k});
          row += p;
          if (mask.flat(k) != 0.0) CHECK(p == 0.0);
        }
        CHECK(std::abs(row - 1.0) <= 1e-10);
      }
    }
  }

  SUBCASE("outputs at unmasked positions ignore masked values") {
    AttentionModule att;
    att.init(cfg, true, rng);
    Tensor x = Tensor::uniform({5, 8}, rng, -1, 1);
    Tensor mask = Tensor::from({5}, {0, 0, 1, 0, 0});
    Tensor y1 = att.forward(x, &mask, kEval);
    Tensor x2 = x;
    for (int64_t i = 0; i < 8; ++i) x2 = x2.with_flat(2 * 8 + i, rng.uniform(-5, 5));
    Tensor y2 = att.forward(x2, &mask, kEval);
    for (int64_t t = 0; t < 5; ++t) {
      if (t == 2) continue;
      for (int64_t d = 0; d < 8; ++d) CHECK(std::abs(y1.at({t, d}) - y2.at({t, d})) <= 1e-10);
    }
  }

  SUBCASE("fully masked input is the residual passthrough") {
    AttentionModule att;
    att.init(cfg, true, rng);
    Tensor x = Tensor::uniform({3, 8}, rng, -1, 1);
    Tensor mask = Tensor::ones({3});
    CHECK(bitwise_equal(att.forward(x, &mask, kEval), x));
  }

  SUBCASE("grouped attention shapes: T=6, g=3 attends over 2 positions") {
    ConformerBlockConfig gcfg = toy_cfg(8, 2);
    gcfg.group_size = 3;
    AttentionModule att;
    att.init(gcfg, true, rng);
    Tensor x = Tensor::uniform({6, 8}, rng, -1, 1);
    Tensor probs;
    Tensor y = att.forward(x, nullptr, kEval, &probs);
    CHECK(y.shape() == Shape{6, 8});
    CHECK(probs.shape() == Shape{2, 2, 2});
  }

  SUBCASE("grouped attention pads remainders and stays opaque to padding") {
    ConformerBlockConfig gcfg = toy_cfg(8, 2);
    gcfg.group_size = 3;
    AttentionModule att;
    att.init(gcfg, true, rng);
    Tensor x = Tensor::uniform({7, 8}, rng, -1, 1);
    CHECK(att.forward(x, nullptr, kEval).shape() == Shape{7, 8});

    Tensor mask = Tensor::from({7}, {0, 0, 0, 0, 0, 1, 1});
    Tensor y1 = att.forward(x, &mask, kEval);
    Tensor x2 = x;
    for (int64_t t = 5; t < 7; ++t)
      for (int64_t i = 0; i < 8; ++i) x2 = x2.with_flat(t * 8 + i, rng.uniform(-5, 5));
    Tensor y2 = att.forward(x2, &mask, kEval);
    for (int64_t t = 0; t < 5; ++t)
      for (int64_t d = 0; d < 8; ++d) CHECK(std::abs(y1.at({t, d}) - y2.at({t, d})) <= 1e-10);
  }

  SUBCASE("gradient check at toy dims, grouped and ungrouped") {
    for (int g : {1, 3}) {
      ConformerBlockConfig gcfg = toy_cfg(6, 2, 3);
      gcfg.group_size = g;
      AttentionModule att;
      att.init(gcfg, true, rng);
      att.u = Tensor::uniform(att.u.shape(), rng, -0.2, 0.2);
      att.v = Tensor::uniform(att.v.shape(), rng, -0.2, 0.2);
      Tensor x = Tensor::uniform({5, 6}, rng, -1, 1);
      Tensor proj = Tensor::uniform({5, 6}, rng, -1, 1);
      std::vector<Tensor*> slots = {&x, &att.wq.w, &att.wr, &att.u, &att.wo.b};
      auto forward_value = [&]() { return sum(mul(att.forward(x, nullptr, kEval), proj)).flat(0); };
      auto analytic = [&]() {
        Tape tape;
        for (Tensor* s : slots) *s = tape.watch(*s);
        GradMap gm = tape.backward(sum(mul(att.forward(x, nullptr, kEval), proj)));
        std::vector<Tensor> gr;
        for (Tensor* s : slots) {
          gr.push_back(gm.grad_of(*s));
          *s = s->detached();
        }
        return gr;
      };
      CHECK(finite_diff_check(slots, forward_value, analytic, 1e-5, 1e-4, 1e-7).max_ratio <= 1.0);
    }
  }
}

TEST_CASE("conv module") {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(34);

  SUBCASE("length contract for both strides") {
    ConvModule c1, c2;
    c1.init(6, 3, 1, 0.0, rng);
    c2.init(6, 3, 2, 0.0, rng);
    Tensor x = Tensor::uniform({9, 6}, rng, -1, 1);
    CHECK(c1.forward(x, nullptr, kEval).shape() == Shape{9, 6});
    CHECK(c2.forward(x, nullptr, kEval).shape() == Shape{5, 6});
  }

  SUBCASE("delta depthwise kernel with pass-through pointwise keeps values") {
    const int64_t d = 4;
    ConvModule cm;
    cm.init(d, 3, 1, 0.0, rng);
    // wire the module into a near-identity: norm off, GLU gate at sigmoid(9)
    cm.norm.gain = Tensor::ones({d});
    cm.norm.bias = Tensor::zeros({d});
    std::vector<double> w1(static_cast<size_t>(d * 2 * d), 0.0);
    for (int64_t i = 0; i < d; ++i) w1[static_cast<size_t>(i * 2 * d + i)] = 1.0;
    cm.pw1.w = Tensor::from({d, 2 * d}, std::move(w1));
    std::vector<double> b1(static_cast<size_t>(2 * d), 0.0);
    for (int64_t i = d; i < 2 * d; ++i) b1[static_cast<size_t>(i)] = 9.0;
    cm.pw1.b = Tensor::from({2 * d}, std::move(b1));
    cm.dw_w = Tensor::from({d, 3}, {0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0});
    cm.dw_b = Tensor::zeros({d});

    Tensor x = Tensor::uniform({6, d}, rng, -0.5, 0.5);
    Tensor y = cm.forward(x, nullptr, kEval);
    // residual + swish(norm(~x)) path: check the branch tracked the input
    // through the delta kernel (structural sanity, not exact identity)
    CHECK(y.shape() == x.shape());
    Tensor y2 = cm.forward(scale(x, 1.0), nullptr, kEval);
    CHECK(bitwise_equal(y, y2));
  }

  SUBCASE("gradient check") {
    ConvModule cm;
    cm.init(4, 3, 1, 0.0, rng);
    Tensor x = Tensor::uniform({5, 4}, rng, -1, 1);
    Tensor proj = Tensor::uniform({5, 4}, rng, -1, 1);
    std::vector<Tensor*> slots = {&x, &cm.pw1.w, &cm.dw_w, &cm.pw2.w, &cm.dnorm.gain};
    auto forward_value = [&]() { return sum(mul(cm.forward(x, nullptr, kEval), proj)).flat(0); };
    auto analytic = [&]() {
      Tape tape;
      for (Tensor* s : slots) *s = tape.watch(*s);
      GradMap gm = tape.backward(sum(mul(cm.forward(x, nullptr, kEval), proj)));
      std::vector<Tensor> gr;
      for (Tensor* s : slots) {
        gr.push_back(gm.grad_of(*s));
        *s = s->detached();
      }
      return gr;
    };
    CHECK(finite_diff_check(slots, forward_value, analytic).max_ratio <= 1.0);
  }
}

TEST_CASE("conformer block") {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(35);
  ConformerBlockConfig cfg = toy_cfg(8, 2, 3);

  SUBCASE("shape preservation at stride 1") {
    ConformerBlock blk;
    blk.init(cfg, rng);
    Tensor x = Tensor::uniform({7, 8}, rng, -1, 1);
    CHECK(blk.forward(x, nullptr, kEval).shape() == x.shape());
    CHECK(ConformerBlock::out_len(cfg, 7) == 7);
  }

  SUBCASE("stride-2 block halves time") {
    ConformerBlockConfig scfg = cfg;
    scfg.conv_stride = 2;
    ConformerBlock blk;
    blk.init(scfg, rng);
    Tensor x = Tensor::uniform({9, 8}, rng, -1, 1);
    CHECK(blk.forward(x, nullptr, kEval).shape() == Shape{5, 8});
    CHECK(ConformerBlock::out_len(scfg, 9) == 5);
  }

  SUBCASE("padding opacity for the whole block") {
    ConformerBlock blk;
    blk.init(cfg, rng);
    Tensor x = Tensor::uniform({6, 8}, rng, -1, 1);
    Tensor mask = Tensor::from({6}, {0, 0, 0, 0, 1, 1});
    Tensor y1 = blk.forward(x, &mask, kEval);
    Tensor x2 = x;
    for (int64_t t = 4; t < 6; ++t)
      for (int64_t i = 0; i < 8; ++i) x2 = x2.with_flat(t * 8 + i, rng.uniform(-3, 3));
    Tensor y2 = blk.forward(x2, &mask, kEval);
    for (int64_t t = 0; t < 4; ++t)
      for (int64_t d = 0; d < 8; ++d) CHECK(std::abs(y1.at({t, d}) - y2.at({t, d})) <= 1e-10);
  }

  SUBCASE("stride bookkeeping matches the symbolic oracle") {
    // stage: one stride-2 block then stride-1 blocks, then a transition
    for (int64_t L : {7, 16, 33, 100}) {
      ConformerBlockConfig s2 = cfg;
      s2.conv_stride = 2;
      int64_t sym = L;
      sym = (sym - 1) / 2 + 1;  // stride-2 block
      StageTransition trans;
      trans.init(8, 12, 1, rng);
      CHECK(ConformerBlock::out_len(s2, L) == sym);
      CHECK(trans.out_len(sym) == sym);

      StageTransition trans2;
      trans2.init(8, 12, 2, rng);
      Tensor x = Tensor::uniform({L, 8}, rng, -1, 1);
      CHECK(trans2.apply(x).shape() == Shape{(L - 1) / 2 + 1, 12});
    }
  }

  SUBCASE("block gradient check (acceptance tolerance)") {
    ConformerBlock blk;
    blk.init(cfg, rng);
    Tensor x = Tensor::uniform({4, 8}, rng, -1, 1);
    Tensor proj = Tensor::uniform({4, 8}, rng, -1, 1);
    ParamRegistry reg;
    blk.reg("b", reg);
    std::vector<Tensor*> slots = {&x};
    for (const auto& [name, t] : reg.entries()) slots.push_back(t);
    auto forward_value = [&]() { return sum(mul(blk.forward(x, nullptr, kEval), proj)).flat(0); };
    auto analytic = [&]() {
      Tape tape;
      for (Tensor* s : slots) *s = tape.watch(*s);
      GradMap gm = tape.backward(sum(mul(blk.forward(x, nullptr, kEval), proj)));
      std::vector<Tensor> gr;
      for (Tensor* s : slots) {
        gr.push_back(gm.grad_of(*s));
        *s = s->detached();
      }
      return gr;
    };
    CHECK(finite_diff_check(slots, forward_value, analytic, 1e-5, 1e-4, 1e-7).max_ratio <= 1.0);
  }
}

TEST_CASE("interaction block solo equals its composed pieces") {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(36);
  ConformerBlockConfig cfg = toy_cfg(8, 2, 3);
  InteractionBlock blk;
  blk.init(cfg, rng);
  Tensor x = Tensor::uniform({5, 8}, rng, -1, 1);
  Tensor composed = blk.final(blk.conv_ffm(blk.att_res(blk.pre(x, kEval), nullptr, kEval), nullptr, kEval));
  CHECK(bitwise_equal(blk.forward_solo(x, nullptr, kEval), composed));
}
