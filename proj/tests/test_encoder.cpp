#include <algorithm>

#include "doctest.h"
#include "smamba/diagnostics.hpp"
#include "smamba/encoder.hpp"
#include "smamba/model.hpp"
#include "smamba/objectives.hpp"
#include "smamba/ops.hpp"
#include "support.hpp"

using namespace smamba;
using testing::rand_tensor;

namespace {

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.c0 = 2;
  cfg.mamba_state = 4;
  cfg.patch = 8;
  cfg.dim = 16;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.adapter_bottleneck = 4;
  return cfg;
}

EncoderParams make_encoder(const ModelConfig& cfg, std::uint64_t seed = 1) {
  CounterRng bb(seed), rng(seed + 1);
  return init_encoder(cfg, bb, rng);
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0); }

bool all_zero(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; });
}

}  // namespace

TEST_SUITE("patch embedding") {
  TEST_CASE("zero image and bias give the position code") {
    auto p = make_encoder(small_cfg());
    p.patch_b = zeros_like(p.patch_b);
    const Tensor t = patch_embed(Tensor({16, 24, 3}, 0.0), p);
    CHECK(t.shape() == Shape{6, 16});
    CHECK(testing::bit_equal(t.data(), sinusoidal_position_2d(2, 3, 16).data()));
  }

  TEST_CASE("16x16 image with patch 8 has four tokens") {
    CounterRng rng(401);
    CHECK(patch_embed(rand_tensor({16, 16, 3}, rng), make_encoder(small_cfg())).dim(0) == 4);
  }

  TEST_CASE("swapping two patches swaps their content rows") {
    CounterRng rng(402);
    const auto p = make_encoder(small_cfg());
    const Tensor img = rand_tensor({16, 16, 3}, rng);
    Tensor swapped = img.clone();
    auto s = swapped.mutable_data();
    // patches (0,0) and (1,1)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x)
        for (std::size_t c = 0; c < 3; ++c) std::swap(s[(y * 16 + x) * 3 + c], s[((y + 8) * 16 + x + 8) * 3 + c]);
    const Tensor pos = sinusoidal_position_2d(2, 2, 16);
    const Tensor a = ops::sub(patch_embed(img, p), pos);
    const Tensor b = ops::sub(patch_embed(swapped, p), pos);
    for (std::size_t d = 0; d < 16; ++d) {
      CHECK(a.at(0 * 16 + d) == doctest::Approx(b.at(3 * 16 + d)).epsilon(1e-12));
      CHECK(a.at(3 * 16 + d) == doctest::Approx(b.at(0 * 16 + d)).epsilon(1e-12));
      CHECK(a.at(1 * 16 + d) == doctest::Approx(b.at(1 * 16 + d)).epsilon(1e-12));
    }
  }

  TEST_CASE("indivisible image is rejected") {
    CounterRng rng(403);
    CHECK_THROWS_AS(patch_embed(rand_tensor({12, 16, 3}, rng), make_encoder(small_cfg())), ShapeError);
  }
}

TEST_SUITE("vit block and attention") {
  TEST_CASE("zero output projections make the block an identity") {
    CounterRng rng(404);
    auto b = make_encoder(small_cfg()).blocks[0];
    b.attn.wo = zeros_like(b.attn.wo);
    b.mlp.w2 = zeros_like(b.mlp.w2);
    const Tensor x = rand_tensor({5, 16}, rng);
    CHECK(testing::bit_equal(vit_block(x, b).data(), x.data()));
  }

  TEST_CASE("attention weights form a convex combination") {
    // Identical value rows must come back unchanged whatever the queries.
    CounterRng rng(405);
    const auto p = init_attention(8, 2, rng);
    const Tensor q = rand_tensor({4, 8}, rng), k = rand_tensor({6, 8}, rng);
    const Tensor row = rand_tensor({1, 8}, rng);
    Tensor v({6, 8});
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t c = 0; c < 8; ++c) v.mutable_data()[r * 8 + c] = row.at(c);
    const Tensor out = attention(q, k, v, p);
    const Tensor want = ops::linear(ops::linear(row, p.wv, p.bv), p.wo, p.bo);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 8; ++c) CHECK(out.at(r * 8 + c) == doctest::Approx(want.at(c)).epsilon(1e-12));
  }

  TEST_CASE("single token: attention is the value path and the block is closed-form") {
    CounterRng rng(406);
    const auto b = make_encoder(small_cfg()).blocks[1];
    const Tensor x = rand_tensor({1, 16}, rng);
    const Tensor n1 = ops::layer_norm(x, b.ln1.gamma, b.ln1.beta);
    const Tensor h = ops::add(x, ops::linear(ops::linear(n1, b.attn.wv, b.attn.bv), b.attn.wo, b.attn.bo));
    const Tensor n2 = ops::layer_norm(h, b.ln2.gamma, b.ln2.beta);
    const Tensor want = ops::add(h, ops::linear(ops::gelu(ops::linear(n2, b.mlp.w1, b.mlp.b1)), b.mlp.w2, b.mlp.b2));
    CHECK(testing::max_abs_diff(vit_block(x, b).data(), want.data()) < 1e-13);
  }
}

TEST_SUITE("adapter") {
  TEST_CASE("gamma zero leaves the ViT stream untouched") {
    CounterRng rng(407);
    const auto p = make_encoder(small_cfg());
    const auto& a = *p.adapters[0];
    CHECK(a.gamma.item() == 0.0);
    const Tensor vit = rand_tensor({4, 16}, rng);
    CHECK(testing::bit_equal(adapter_inject(vit, rand_tensor({4, 16}, rng), a).vit.data(), vit.data()));
  }

  TEST_CASE("zero prior with silent projections leaves both streams unchanged") {
    CounterRng rng(408);
    auto a = *make_encoder(small_cfg()).adapters[0];
    a.gamma = Tensor({1}, 1.3);
    a.enhance.wo = zeros_like(a.enhance.wo);
    a.enhance.bo = zeros_like(a.enhance.bo);
    a.inject.bv = zeros_like(a.inject.bv);
    a.inject.bo = zeros_like(a.inject.bo);
    const Tensor vit = rand_tensor({4, 16}, rng);
    const Tensor prior({4, 16}, 0.0);
    CHECK(all_zero(attention(vit, prior, prior, a.inject)));
    const auto out = adapter_inject(vit, prior, a);
    CHECK(testing::bit_equal(out.vit.data(), vit.data()));
    CHECK(all_zero(out.prior));
  }

  TEST_CASE("gradcheck through one injection point") {
    CounterRng rng(409);
    auto a = *make_encoder(small_cfg()).adapters[0];
    a.gamma = Tensor({1}, 0.7);
    for (Tensor* t : {&a.down_b, &a.up_b}) *t = rand_tensor(t->shape(), rng, -0.3, 0.3);
    Tensor vit = rand_tensor({4, 16}, rng, -1, 1, true), prior = rand_tensor({4, 16}, rng, -1, 1, true);
    std::vector<Tensor> params{vit, prior, a.gamma, a.down_w, a.down_b, a.up_w, a.up_b,
                               a.inject.wq, a.inject.wv, a.inject.wo, a.enhance.wq, a.enhance.wv};
    for (auto& t : params) t.set_requires_grad(true);
    const Tensor r1 = rand_tensor({4, 16}, rng), r2 = rand_tensor({4, 16}, rng);
    const auto res = gradcheck(
        [&] {
          const auto out = adapter_inject(vit, prior, a);
          return ops::add(ops::sum(ops::mul(out.vit, r1)), ops::sum(ops::mul(out.prior, r2)));
        },
        params);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_SUITE("prior tokens and mask head") {
  TEST_CASE("constant prior map gives identical tokens") {
    const auto p = make_encoder(small_cfg());
    const Tensor t = prior_tokenize(Tensor({16, 16, 12}, 0.4), p);
    REQUIRE(t.shape() == Shape{4, 16});
    for (std::size_t r = 1; r < 4; ++r)
      for (std::size_t c = 0; c < 16; ++c) CHECK(t.at(r * 16 + c) == t.at(c));
  }

  TEST_CASE("32x32x96 with patch 8 gives 16 tokens") {
    auto cfg = small_cfg();
    cfg.c0 = 16;
    CHECK(prior_tokenize(Tensor({32, 32, 96}, 1.0), make_encoder(cfg)).shape() == Shape{16, 16});
  }

  TEST_CASE("tokens are projected window means") {
    CounterRng rng(410);
    const auto p = make_encoder(small_cfg());
    const Tensor md = rand_tensor({8, 16, 12}, rng);
    const Tensor t = prior_tokenize(md, p);
    REQUIRE(t.dim(0) == 2);
    for (std::size_t blk = 0; blk < 2; ++blk) {
      std::vector<double> mean(12, 0.0);
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x)
          for (std::size_t c = 0; c < 12; ++c) mean[c] += md.at((y * 16 + blk * 8 + x) * 12 + c) / 64.0;
      for (std::size_t d = 0; d < 16; ++d) {
        double want = p.prior_proj_b.at(d);
        for (std::size_t c = 0; c < 12; ++c) want += mean[c] * p.prior_proj_w.at(c * 16 + d);
        CHECK(t.at(blk * 16 + d) == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("zero head gives zero logits and probability 0.5") {
    CounterRng rng(411);
    const auto p = make_encoder(small_cfg());
    const Tensor logits = encoder_mask_head(rand_tensor({2, 3, 16}, rng), p, 16, 24);
    CHECK(logits.shape() == Shape{16, 24});
    CHECK(all_zero(logits));
    const Plane prob = sigmoid_plane(logits);
    CHECK(std::all_of(prob.v.begin(), prob.v.end(), [](double v) { return v == 0.5; }));
  }

  TEST_CASE("constant embeddings give constant logits") {
    CounterRng rng(412);
    auto p = make_encoder(small_cfg());
    p.head_w = rand_tensor(p.head_w.shape(), rng);
    p.head_b = Tensor({1}, 0.3);
    const Tensor emb = ops::mul(Tensor({2, 2, 16}, 1.0), Tensor({1, 1, 16}, rand_tensor({16}, rng).values()));
    const Tensor logits = encoder_mask_head(emb, p, 16, 16);
    for (std::size_t i = 1; i < logits.numel(); ++i) CHECK(logits.at(i) == doctest::Approx(logits.at(0)).epsilon(1e-14));
  }
}

TEST_SUITE("encoder forward") {
  TEST_CASE("default config, 32x32 image") {
    ModelConfig cfg;
    const SamMamba m = build_model(cfg, 3);
    CounterRng rng(413);
    const auto out = encoder_forward(rand_tensor({32, 32, 3}, rng, 0, 1), m.prior, m.encoder);
    CHECK(out.embeddings.shape() == Shape{4, 4, 64});
    CHECK(out.pseudo_mask_logits.shape() == Shape{32, 32});
    CHECK(out.prior.shape() == Shape{32, 32, 96});
  }

  TEST_CASE("with every gamma at zero the encoder equals the bare backbone") {
    CounterRng rng(414);
    for (const char* ablation : {"adapter", "msd", "full", "uni5"}) {
      auto cfg = small_cfg();
      REQUIRE(apply_ablation(cfg, ablation));
      const SamMamba m = build_model(cfg, 4);
      const Tensor img = rand_tensor({16, 16, 3}, rng, 0, 1);
      CHECK(testing::bit_equal(encoder_forward(img, m.prior, m.encoder).embeddings.data(),
                               backbone_forward(img, m.encoder).data()));
    }
  }

  TEST_CASE("injection points follow inject_at") {
    auto cfg = small_cfg();
    cfg.depth = 3;
    cfg.inject_at = {1};
    const auto p = make_encoder(cfg);
    CHECK_FALSE(p.adapters[0].has_value());
    CHECK(p.adapters[1].has_value());
    CHECK_FALSE(p.adapters[2].has_value());
  }

  TEST_CASE("backbone never receives gradient") {
    CounterRng rng(415);
    SamMamba m = build_model(small_cfg(), 5);
    for (int stage : {1, 2}) {
      set_trainable(m, stage, true);
      DiffContext ctx;
      std::vector<std::string> names;
      for (const auto& p : m.params.all())
        if (p.group == ParamGroup::Backbone) {
          ctx.watch(p.value);
          names.push_back(p.name);
          CHECK_FALSE(p.value.requires_grad());
        }
      const auto out = model_forward(m, rand_tensor({16, 16, 3}, rng, 0, 1), true);
      const Tensor loss = ops::add(ops::sum(out.decoder_logits), ops::sum(out.enc.pseudo_mask_logits));
      const auto grads = backward(loss, ctx);
      for (const auto& g : grads) CHECK(std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; }));
    }
  }

  TEST_CASE("trainable counts grow from adapter to +MSD to +MSD+Mamba") {
    std::size_t counts[3];
    const char* names[3] = {"adapter", "msd", "full"};
    for (int i = 0; i < 3; ++i) {
      ModelConfig cfg;
      apply_ablation(cfg, names[i]);
      counts[i] = trainable_count(build_model(cfg, 0));
    }
    CHECK(counts[0] < counts[1]);
    CHECK(counts[1] < counts[2]);
  }

  TEST_CASE("stage-1 loss gradcheck on the tiny config") {
    const RunConfig rc = tiny_run_config();
    SamMamba m = build_model(rc.model, 6);
    const auto trainable = set_trainable(m, 1, false);
    CounterRng rng(416);
    std::vector<Tensor> params;
    for (const auto* p : trainable) {
      Tensor t = p->value;
      auto d = t.mutable_data();
      // Zero gates and heads would hide every adapter gradient.
      if (std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; }))
        for (auto& v : d) v = rng.uniform(-0.5, 0.5);
      params.push_back(t);
    }
    const Tensor img = rand_tensor({16, 16, 3}, rng, 0, 1);
    Plane g(16, 16);
    for (std::size_t y = 4; y < 12; ++y)
      for (std::size_t x = 3; x < 10; ++x) g(y, x) = 1.0;
    LossConfig lc;
    lc.weight_kernel = 5;
    const auto res = gradcheck(
        [&] { return stage1_loss(g, encoder_forward(img, m.prior, m.encoder).pseudo_mask_logits, lc); }, params);
    CAPTURE(res.worst_param);
    CHECK(res.max_rel_error < 1e-4);
  }
}
