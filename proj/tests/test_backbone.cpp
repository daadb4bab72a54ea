#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstddef>
#include <vector>

#include "chebyodo/backbone.hpp"
#include "chebyodo/errors.hpp"
#include "chebyodo/rng.hpp"
#include "chebyodo/tensor.hpp"
#include "oracles.hpp"

using namespace chebyodo;

namespace {
void zero_units(Backbone& backbone) {
  for (ResBlock& block : backbone.blocks) {
    for (auto& v : block.unit1.conv_weight.vec()) v = 0.0;
    for (auto& v : block.unit2.conv_weight.vec()) v = 0.0;
  }
}
}  // namespace

TEST_CASE("zero-initialized block with identity shortcut is the identity") {
  Rng rng(1);
  ResBlock block = ResBlock::init(4, 4, 1, 3, 1, 3, rng);
  REQUIRE_FALSE(block.shortcut.has_value());
  for (auto& v : block.unit1.conv_weight.vec()) v = 0.0;
  for (auto& v : block.unit2.conv_weight.vec()) v = 0.0;

  Tensor x = oracle::random_tensor({4, 20}, rng);
  Tensor y = resblock_forward(block, x);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.vec().size(); ++i) {
    CHECK(y.vec()[i] == x.vec()[i]);
  }
}

TEST_CASE("stride-2 block halves the length") {
  Rng rng(2);
  ResBlock block = ResBlock::init(4, 8, 2, 3, 1, 3, rng);
  REQUIRE(block.shortcut.has_value());
  Tensor x = oracle::random_tensor({4, 200}, rng);
  Tensor y = resblock_forward(block, x);
  CHECK(y.dim(0) == 8);
  CHECK(y.dim(1) == 100);
}

TEST_CASE("block gradients agree with finite differences") {
  Rng rng(31337);
  ResBlock block = ResBlock::init(4, 6, 2, 3, 2, 3, rng);
  Tensor x = oracle::random_tensor({4, 17}, rng, 1.1, /*requires_grad=*/true);
  Tensor mixer = oracle::random_tensor({6, 9}, rng);

  auto forward = [&]() {
    Tensor y = resblock_forward(block, x);
    return reduce_sum(reduce_sum(mul(y, mixer), 1), 0).item();
  };

  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor y = resblock_forward(block, x);
    Tensor s = reduce_sum(reduce_sum(mul(y, mixer), 1), 0);
    backward(s);
  }

  Rng pick(99);
  for (auto& [name, p] : block.parameters("block")) {
    INFO("parameter ", name);
    CHECK(oracle::fd_check(forward, p, p.grad(), pick).max_rel < 1e-4);
  }
  CHECK(oracle::fd_check(forward, x, x.grad(), pick).max_rel < 1e-4);
}

TEST_CASE("default config maps a 200-sample window to 512 x 25") {
  Rng rng(3);
  Backbone backbone = Backbone::init(BackboneConfig{}, rng);
  CHECK(backbone.blocks.size() == 8);
  CHECK(backbone_output_length(BackboneConfig{}, 200) == 25);

  Tensor x = oracle::random_tensor({6, 200}, rng);
  Tensor y = backbone_forward(backbone, x);
  CHECK(y.dim(0) == 512);
  CHECK(y.dim(1) == 25);
  CHECK(all_finite(y));
}

TEST_CASE("announced output length matches the forward pass across windows") {
  BackboneConfig cfg;
  cfg.stage_channels = {8, 16, 32, 64};
  Rng rng(4);
  Backbone backbone = Backbone::init(cfg, rng);
  for (int window : {100, 200, 400}) {
    Tensor x = oracle::random_tensor({6, window}, rng);
    Tensor y = backbone_forward(backbone, x);
    CHECK(y.dim(0) == cfg.stage_channels[3]);
    CHECK(y.dim(1) == backbone_output_length(cfg, window));
  }
}

TEST_CASE("forward is deterministic") {
  BackboneConfig cfg;
  cfg.stage_channels = {8, 16, 32, 64};
  Rng rng(5);
  Backbone backbone = Backbone::init(cfg, rng);
  Tensor x = oracle::random_tensor({6, 120}, rng);
  Tensor y1 = backbone_forward(backbone, x);
  Tensor y2 = backbone_forward(backbone, x);
  REQUIRE(y1.shape() == y2.shape());
  for (std::size_t i = 0; i < y1.vec().size(); ++i) {
    CHECK(y1.vec()[i] == y2.vec()[i]);
  }
}

TEST_CASE("wrong input channel count is a contract error") {
  Rng rng(6);
  BackboneConfig cfg;
  cfg.stage_channels = {8, 8, 8, 8};
  Backbone backbone = Backbone::init(cfg, rng);
  CHECK_THROWS_AS(backbone_forward(backbone, Tensor::zeros({5, 100})), ContractError);
  CHECK_THROWS_AS(backbone_forward(backbone, Tensor::zeros({7, 100})), ContractError);
}

TEST_CASE("config validation") {
  Rng rng(7);
  BackboneConfig cfg;
  cfg.stage_channels = {16, 8, 32, 64};  // decreasing
  CHECK_THROWS_AS(Backbone::init(cfg, rng), ContractError);
  cfg = BackboneConfig{};
  cfg.stage_strides = {1, 0, 2, 2};
  CHECK_THROWS_AS(Backbone::init(cfg, rng), ContractError);
  cfg = BackboneConfig{};
  cfg.kernel_size = 4;  // even kernels cannot keep residual/shortcut lengths equal
  CHECK_THROWS_AS(Backbone::init(cfg, rng), ContractError);
  // A tiny window still survives every stage: lengths never drop below one.
  cfg = BackboneConfig{};
  CHECK(backbone_output_length(cfg, 4) == 1);
}

TEST_CASE("zero-initialized backbone equals its shortcut chain") {
  BackboneConfig cfg;
  cfg.stage_channels = {4, 8, 8, 16};
  cfg.stage_strides = {1, 2, 1, 2};
  cfg.degree = 2;
  Rng rng(8);
  Backbone backbone = Backbone::init(cfg, rng);
  zero_units(backbone);

  Tensor x = oracle::random_tensor({6, 40}, rng);
  Tensor want = x;
  for (const ResBlock& block : backbone.blocks) {
    if (block.shortcut) want = shortcut_forward(*block.shortcut, want);
  }
  Tensor got = backbone_forward(backbone, x);
  REQUIRE(got.shape() == want.shape());
  for (std::size_t i = 0; i < got.vec().size(); ++i) {
    CHECK(got.vec()[i] == want.vec()[i]);
  }
}

TEST_CASE("every parameter receives a finite gradient on a default-config step") {
  Rng rng(9);
  Backbone backbone = Backbone::init(BackboneConfig{}, rng);
  Tensor x = oracle::random_tensor({6, 200}, rng);
  Tensor mixer = oracle::random_tensor({512, 25}, rng);

  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor y = backbone_forward(backbone, x);
    Tensor s = reduce_sum(reduce_sum(mul(y, mixer), 1), 0);
    backward(s);
  }

  auto params = backbone.parameters("backbone");
  CHECK(params.size() > 0);
  for (auto& [name, p] : params) {
    INFO("parameter ", name);
    REQUIRE(p.has_grad());
    bool finite = true;
    for (double g : p.grad()) finite = finite && std::isfinite(g);
    CHECK(finite);
  }
}

TEST_CASE("grouped backbone falls back to dense mixing only at the stem") {
  BackboneConfig cfg;
  cfg.stage_channels = {8, 16, 32, 64};
  cfg.groups = 4;  // does not divide the 6-channel input
  Rng rng(10);
  Backbone backbone = Backbone::init(cfg, rng);
  CHECK(backbone.blocks[0].unit1.config.groups == 1);
  CHECK(backbone.blocks[0].unit2.config.groups == 1);
  CHECK(backbone.blocks[1].unit1.config.groups == 4);
  CHECK(backbone.blocks[2].unit1.config.groups == 4);
  Tensor x = oracle::random_tensor({6, 64}, rng);
  Tensor y = backbone_forward(backbone, x);
  CHECK(all_finite(y));
}
