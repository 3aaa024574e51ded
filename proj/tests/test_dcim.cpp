// Copyright 2026 DCIM-AVSR Authors
// Interaction-layer semantics: adapter paths, mode gating, gradient flow
//
// Licensed under the Apache License, Version 2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dcim/dcim.hpp"
#include "test_util.hpp"

using namespace dcim;
using namespace dcim::testutil;

namespace {

const FwdCtx kEval{};

ConformerBlockConfig toy_cfg() {
  ConformerBlockConfig cfg;
  cfg.dim = 8;
  cfg.n_heads = 2;
  cfg.conv_kernel = 3;
  cfg.ff_expansion = 2;
  return cfg;
}

DCIMStack make_stack(int n_layers, const DCIMMode& mode, uint64_t seed = 41) {
  Rng rng(seed);
  DCIMStack stack;
  stack.init(n_layers, toy_cfg(), 4, mode, rng);
  return stack;
}

// random nonzero adapters so cross paths actually carry signal
void randomize_adapters(DCIMStack& stack, uint64_t seed) {
  Rng rng(seed);
  for (DCIMLayer& layer : stack.layers_) {
    if (!layer.wired) continue;
    for (Adapter* a : {&layer.adapter_attn, &layer.adapter_conv}) {
      a->l3.w = Tensor::uniform(a->l3.w.shape(), rng, -0.3, 0.3);
      a->l3.b = Tensor::uniform(a->l3.b.shape(), rng, -0.1, 0.1);
    }
  }
}

}  // namespace

TEST_CASE("adapter contract") {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(42);

  SUBCASE("zero-initialized final layer gives exactly zero output") {
    Adapter a;
    a.init(8, 4, 8, rng);
    Tensor x = Tensor::uniform({5, 8}, rng, -2, 2);
    Tensor y = a.forward(x);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.flat(i) == 0.0);
  }

  SUBCASE("parameter count formula") {
    Adapter a;
    a.init(256, 180, 256, rng);
    CHECK(a.param_count() == 125176);  // 46260 + 32580 + 46336
    ParamRegistry r;
    a.reg("a", r);
    CHECK(r.total_count() == 125176);

    Adapter b;
    b.init(8, 4, 6, rng);
    CHECK(b.param_count() == 8 * 4 + 4 + 4 * 4 + 4 + 4 * 6 + 6);
  }

  SUBCASE("dimension mismatch") {
    Adapter a;
    a.init(8, 4, 8, rng);
    CHECK_THROWS_AS(a.forward(Tensor::zeros({3, 6})), std::invalid_argument);
  }

  SUBCASE("gradient check at [8,4,8]") {
    Adapter a;
    a.init(8, 4, 8, rng);
    a.l3.w = Tensor::uniform({4, 8}, rng, -0.5, 0.5);  // off the zero init for generic gradients
    Tensor x = Tensor::uniform({3, 8}, rng, -1, 1);
    Tensor proj = Tensor::uniform({3, 8}, rng, -1, 1);
    std::vector<Tensor*> slots = {&x, &a.l1.w, &a.l2.w, &a.l3.w, &a.l3.b};
    auto fwd = [&]() { return sum(mul(a.forward(x), proj)).flat(0); };
    auto ana = [&]() {
      Tape tape;
      for (Tensor* s : slots) *s = tape.watch(*s);
      GradMap gm = tape.backward(sum(mul(a.forward(x), proj)));
      std::vector<Tensor> g;
      for (Tensor* s : slots) {
        g.push_back(gm.grad_of(*s));
        *s = s->detached();
      }
      return g;
    };
    CHECK(finite_diff_check(slots, fwd, ana).max_ratio <= 1.0);
  }
}

TEST_CASE("layer mode gating") {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(43);
  Tensor xa = Tensor::uniform({6, 8}, rng, -1, 1);
  Tensor xv = Tensor::uniform({6, 8}, rng, -1, 1);
  Tensor xa2 = Tensor::uniform({6, 8}, rng, -1, 1);
  Tensor xv2 = Tensor::uniform({6, 8}, rng, -1, 1);

  SUBCASE("purification+completion off decouples the streams exactly") {
    DCIMMode off;
    off.purification_on = false;
    off.completion_on = false;
    DCIMStack stack = make_stack(1, off);
    randomize_adapters(stack, 7);
    auto y1 = stack.layers_[0].forward(xa, xv, off, kEval);
    auto y2 = stack.layers_[0].forward(xa, xv2, off, kEval);
    auto y3 = stack.layers_[0].forward(xa2, xv, off, kEval);
    CHECK(bitwise_equal(y1.audio, y2.audio));    // audio blind to visual
    CHECK(bitwise_equal(y1.visual, y3.visual));  // visual blind to audio
    // and each stream equals the plain solo block
    CHECK(bitwise_equal(y1.audio, stack.layers_[0].audio_block.forward_solo(xa, nullptr, kEval)));
    CHECK(bitwise_equal(y1.visual, stack.layers_[0].visual_block.forward_solo(xv, nullptr, kEval)));
  }

  SUBCASE("dual mode has a nonzero cross-Jacobian") {
    DCIMMode dual;
    DCIMStack stack = make_stack(1, dual);
    randomize_adapters(stack, 8);
    auto y1 = stack.layers_[0].forward(xa, xv, dual, kEval);
    auto y2 = stack.layers_[0].forward(xa, xv2, dual, kEval);
    auto y3 = stack.layers_[0].forward(xa2, xv, dual, kEval);
    CHECK(max_abs_diff(y1.audio, y2.audio) > 1e-6);   // visual reaches audio
    CHECK(max_abs_diff(y1.visual, y3.visual) > 1e-6); // audio reaches visual
  }

  SUBCASE("v_to_a leaves the visual stream invariant to audio input") {
    DCIMMode v2a;
    v2a.direction = FusionDirection::v_to_a;
    DCIMStack stack = make_stack(2, v2a);
    randomize_adapters(stack, 9);
    auto y1 = stack.forward(xa, xv, kEval);
    auto y2 = stack.forward(xa2, xv, kEval);
    CHECK(max_abs_diff(y1.visual, y2.visual) <= 1e-12);
    CHECK(max_abs_diff(y1.audio, y2.audio) > 1e-6);  // audio still flows
    // audio keeps receiving visual information
    auto y3 = stack.forward(xa, xv2, kEval);
    CHECK(max_abs_diff(y1.audio, y3.audio) > 1e-6);
  }

  SUBCASE("a_to_v is the mirror image") {
    DCIMMode a2v;
    a2v.direction = FusionDirection::a_to_v;
    DCIMStack stack = make_stack(2, a2v);
    randomize_adapters(stack, 10);
    auto y1 = stack.forward(xa, xv, kEval);
    auto y2 = stack.forward(xa, xv2, kEval);
    CHECK(max_abs_diff(y1.audio, y2.audio) <= 1e-12);
    auto y3 = stack.forward(xa2, xv, kEval);
    CHECK(max_abs_diff(y1.visual, y3.visual) > 1e-6);
  }

  SUBCASE("zero-init adapters equal the fully-gated-off layer exactly") {
    DCIMMode dual;
    DCIMStack stack = make_stack(1, dual, 77);  // adapters left at zero init
    DCIMMode off;
    off.purification_on = false;
    off.completion_on = false;
    auto y_dual = stack.layers_[0].forward(xa, xv, dual, kEval);
    auto y_off = stack.layers_[0].forward(xa, xv, off, kEval);
    CHECK(bitwise_equal(y_dual.audio, y_off.audio));
    CHECK(bitwise_equal(y_dual.visual, y_off.visual));
  }

  SUBCASE("length mismatch is rejected") {
    DCIMMode dual;
    DCIMStack stack = make_stack(1, dual);
    CHECK_THROWS_AS(stack.forward(xa, Tensor::zeros({5, 8}), kEval), std::invalid_argument);
  }
}

TEST_CASE("adapter sharing: one parameter set serves all four sites") {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(44);
  DCIMMode dual;
  DCIMStack stack = make_stack(1, dual);
  Tensor xa = Tensor::uniform({4, 8}, rng, -1, 1);
  Tensor xv = Tensor::uniform({4, 8}, rng, -1, 1);

  auto before = stack.layers_[0].forward(xa, xv, dual, kEval);
  // touching the single attention-site adapter moves BOTH streams
  randomize_adapters(stack, 11);
  auto after = stack.layers_[0].forward(xa, xv, dual, kEval);
  CHECK(max_abs_diff(before.audio, after.audio) > 1e-8);
  CHECK(max_abs_diff(before.visual, after.visual) > 1e-8);

  // registry holds exactly two adapters for the layer (self == cross params)
  ParamRegistry r;
  stack.reg("a", "v", "d", r);
  int adapters = 0;
  for (const auto& [name, t] : r.entries()) {
    if (name.find("adapter") != std::string::npos && name.find(".l1.w") != std::string::npos) ++adapters;
  }
  CHECK(adapters == 2);
}

TEST_CASE("stacking equals iterated layer application") {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(45);
  DCIMMode dual;
  DCIMStack stack = make_stack(3, dual);
  randomize_adapters(stack, 12);
  Tensor xa = Tensor::uniform({5, 8}, rng, -1, 1);
  Tensor xv = Tensor::uniform({5, 8}, rng, -1, 1);

  auto full = stack.forward(xa, xv, kEval);
  Tensor a = xa, v = xv;
  for (const DCIMLayer& layer : stack.layers_) {
    auto o = layer.forward(a, v, dual, kEval);
    a = o.audio;
    v = o.visual;
  }
  CHECK(bitwise_equal(full.audio, a));
  CHECK(bitwise_equal(full.visual, v));
}

TEST_CASE("intermediate taps") {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(46);
  DCIMMode dual;

  SUBCASE("five layers give taps at 2 and 4; one layer gives none") {
    CHECK(DCIMStack::tap_layer_indices(5, dual) == std::vector<int>{2, 4});
    CHECK(DCIMStack::tap_layer_indices(1, dual).empty());
    DCIMMode last2 = dual;
    last2.layers = DcimLayerSpan::last_two;
    CHECK(DCIMStack::tap_layer_indices(5, last2) == std::vector<int>{4});

    DCIMStack stack = make_stack(5, dual);
    Tensor xa = Tensor::uniform({4, 8}, rng, -1, 1);
    Tensor xv = Tensor::uniform({4, 8}, rng, -1, 1);
    CHECK(stack.forward(xa, xv, kEval).taps.size() == 2);
  }

  SUBCASE("last_two leaves early layers without adapters") {
    DCIMMode last2 = dual;
    last2.layers = DcimLayerSpan::last_two;
    DCIMStack stack = make_stack(5, last2);
    CHECK_FALSE(stack.layers_[0].wired);
    CHECK_FALSE(stack.layers_[1].wired);
    CHECK_FALSE(stack.layers_[2].wired);
    CHECK(stack.layers_[3].wired);
    CHECK(stack.layers_[4].wired);

    ParamRegistry full_r, l2_r;
    DCIMStack full = make_stack(5, dual);
    full.reg("a", "v", "d", full_r);
    stack.reg("a", "v", "d", l2_r);
    // the difference is exactly 3 layers x 2 adapters
    const int64_t adapter_params = full.layers_[0].adapter_attn.param_count();
    CHECK(full_r.total_count() - l2_r.total_count() == 3 * 2 * adapter_params);
  }

  SUBCASE("a tap-only loss still reaches the adapters") {
    DCIMStack stack = make_stack(2, dual);
    Tensor xa = Tensor::uniform({4, 8}, rng, -1, 1);
    Tensor xv = Tensor::uniform({4, 8}, rng, -1, 1);
    Tape tape;
    DCIMLayer& l2 = stack.layers_[1];
    l2.adapter_conv.l1.w = tape.watch(l2.adapter_conv.l1.w);
    l2.adapter_conv.l3.w = tape.watch(l2.adapter_conv.l3.w);
    l2.adapter_attn.l3.w = tape.watch(l2.adapter_attn.l3.w);
    auto out = stack.forward(xa, xv, kEval);
    REQUIRE(out.taps.size() == 1);
    // linear probe: a CTC loss downstream has a nonzero gradient even at the
    // zero-valued tap, and so does this
    Tensor probe = Tensor::uniform({4, 8}, rng, -1, 1);
    GradMap gm = tape.backward(sum(mul(out.taps[0], probe)));
    // conv adapter: l3's weight gets gradient even while it is still zero;
    // l1 only matters through l3, which is zero, so its gradient is zero
    CHECK(max_abs_diff(gm.grad_of(l2.adapter_conv.l3.w), Tensor::zeros(l2.adapter_conv.l3.w.shape())) > 1e-12);
    l2.adapter_conv.l1.w = l2.adapter_conv.l1.w.detached();
    l2.adapter_conv.l3.w = l2.adapter_conv.l3.w.detached();
    l2.adapter_attn.l3.w = l2.adapter_attn.l3.w.detached();
  }
}

TEST_CASE("full interaction layer gradient check, both streams") {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(47);
  DCIMMode dual;
  DCIMStack stack = make_stack(1, dual, 55);
  randomize_adapters(stack, 13);
  DCIMLayer& layer = stack.layers_[0];
  Tensor xa = Tensor::uniform({4, 8}, rng, -1, 1);
  Tensor xv = Tensor::uniform({4, 8}, rng, -1, 1);
  Tensor pa = Tensor::uniform({4, 8}, rng, -1, 1);
  Tensor pv = Tensor::uniform({4, 8}, rng, -1, 1);

  ParamRegistry reg;
  layer.reg("a", "v", "d", reg);
  std::vector<Tensor*> slots = {&xa, &xv};
  for (const auto& [name, t] : reg.entries()) slots.push_back(t);

  auto loss = [&]() {
    auto out = layer.forward(xa, xv, dual, kEval);
    return add(sum(mul(out.audio, pa)), sum(mul(out.visual, pv)));
  };
  auto fwd = [&]() { return loss().flat(0); };
  auto ana = [&]() {
    Tape tape;
    for (Tensor* s : slots) *s = tape.watch(*s);
    GradMap gm = tape.backward(loss());
    std::vector<Tensor> g;
    for (Tensor* s : slots) {
      g.push_back(gm.grad_of(*s));
      *s = s->detached();
    }
    return g;
  };
  auto res = finite_diff_check(slots, fwd, ana, 1e-5, 1e-4, 1e-7);
  CHECK_MESSAGE(res.max_ratio <= 1.0, res.worst);
}
