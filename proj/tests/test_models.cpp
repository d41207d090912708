#include <doctest.h>

#include <cmath>

#include "suffixbench/diffcore/gradcheck.hpp"
#include "suffixbench/models/model.hpp"

using namespace suffixbench;
using namespace suffixbench::models;
using diffcore::leaf;
using diffcore::NodePtr;
using diffcore::Tensor;

namespace {

template <class S>
Model<S> make_model(Arch arch, int vocab = 8, int d = 16, int layers = 2, int heads = 2,
                    std::uint64_t seed = 42) {
    ModelConfig cfg;
    cfg.arch = arch;
    cfg.layers = layers;
    cfg.d_latent = d;
    cfg.heads = heads;
    cfg.conv_filter = 2;
    cfg.dropout = 0.3;
    cfg.vocab_size = vocab;
    cfg.max_len = 12;
    RngStream rng(seed);
    return Model<S>(cfg, rng);
}

TokenBlock toy_block(long b, long n, int vocab, std::uint64_t seed = 1) {
    RngStream rng(seed);
    TokenBlock blk;
    blk.acts = IMat(b, n);
    blk.times = FMat(b, n);
    blk.lengths.assign(static_cast<size_t>(b), static_cast<int>(n));
    for (auto& a : blk.acts.v) a = static_cast<int>(rng.uniform_int(Vocabulary::kNumSpecials, vocab - 1));
    for (auto& t : blk.times.v) t = static_cast<float>(rng.uniform01());
    return blk;
}

// max |a-b| over the first `positions` sequence positions of [B,n,d] latents
template <class S>
double max_diff_before(const Tensor<S>& a, const Tensor<S>& b, long positions, long d) {
    double worst = 0;
    for (long t = 0; t < positions; ++t)
        for (long i = 0; i < d; ++i)
            worst = std::max(worst, std::fabs(static_cast<double>(a.data[static_cast<size_t>(t * d + i)]) -
                                              static_cast<double>(b.data[static_cast<size_t>(t * d + i)])));
    return worst;
}

}  // namespace

TEST_CASE("embedding fusion") {
    auto model = make_model<double>(Arch::Gpt);
    const long d = model.config().d_latent;

    SUBCASE("zero time leaves exactly the activity projection") {
        IMat acts(1, 1);
        acts.at(0, 0) = 5;
        FMat times(1, 1, 0.f);
        auto z = model.emb.embed(acts, times);
        for (long i = 0; i < d; ++i)
            CHECK(z->value.data[static_cast<size_t>(i)] ==
                  model.emb.table->value.data[static_cast<size_t>(5 * d + i)]);
    }
    SUBCASE("equal events embed identically") {
        IMat acts(1, 2);
        acts.at(0, 0) = acts.at(0, 1) = 6;
        FMat times(1, 2, 0.25f);
        auto z = model.emb.embed(acts, times);
        for (long i = 0; i < d; ++i)
            CHECK(z->value.data[static_cast<size_t>(i)] == z->value.data[static_cast<size_t>(d + i)]);
    }
    SUBCASE("gradients of both projections match finite differences") {
        IMat acts(2, 3);
        acts.v = {4, 5, 6, 7, 6, 4};
        FMat times(2, 3, 0.5f);
        times.v = {0.1f, 0.9f, 0.4f, 0.2f, 0.8f, 0.3f};
        auto report = diffcore::check_gradients<double>(
            {model.emb.table, model.emb.time_vec},
            [&]() { return diffcore::sum_all(diffcore::tanh_op(model.emb.embed(acts, times))); });
        CHECK(report.max_rel_err <= 1e-3);
    }
}

TEST_CASE("lstm forward") {
    auto model = make_model<float>(Arch::Lstm);
    const long d = model.config().d_latent;

    SUBCASE("shape contract") {
        auto blk = toy_block(2, 5, 8);
        auto latents = model.forward_tokens(blk, false, nullptr);
        CHECK(latents->value.shape == std::vector<long>{2, 5, d});
    }
    SUBCASE("recurrence causality: perturbing a later input leaves earlier outputs bit-identical") {
        auto blk = toy_block(1, 5, 8);
        auto base = model.forward_tokens(blk, false, nullptr);
        auto perturbed_blk = blk;
        perturbed_blk.times.at(0, 3) += 0.37f;
        perturbed_blk.acts.at(0, 3) = 4;
        auto perturbed = model.forward_tokens(perturbed_blk, false, nullptr);
        CHECK(max_diff_before(base->value, perturbed->value, 3, d) == 0.0);
        // and the perturbed position itself moved
        CHECK(max_diff_before(base->value, perturbed->value, 4, d) > 0.0);
    }
}

TEST_CASE("single-layer lstm step equals hand-rolled gate arithmetic") {
    // one layer, d=2, two steps, computed with explicit scalar formulas
    ModelConfig cfg;
    cfg.arch = Arch::Lstm;
    cfg.layers = 1;
    cfg.d_latent = 2;
    cfg.heads = 1;
    cfg.vocab_size = 6;
    cfg.max_len = 4;
    cfg.dropout = 0.0;
    RngStream rng(9);
    Model<double> model(cfg, rng);

    TokenBlock blk = toy_block(1, 2, 6, 77);
    auto latents = model.forward_tokens(blk, false, nullptr);

    // scalar reference
    const auto& layer = model.lstm.layers[0];
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    double h[2] = {0, 0}, c[2] = {0, 0};
    for (long t = 0; t < 2; ++t) {
        double x[2];
        for (long i = 0; i < 2; ++i) {
            x[i] = model.emb.table->value.data[static_cast<size_t>(blk.acts.at(0, t) * 2 + i)] +
                   blk.times.at(0, t) * model.emb.time_vec->value.data[static_cast<size_t>(i)];
        }
        double gates[8];
        for (long gci = 0; gci < 8; ++gci) {
            double acc = layer.b->value.data[static_cast<size_t>(gci)];
            for (long i = 0; i < 2; ++i) acc += x[i] * layer.wx->value.data[static_cast<size_t>(i * 8 + gci)];
            for (long i = 0; i < 2; ++i) acc += h[i] * layer.wh->value.data[static_cast<size_t>(i * 8 + gci)];
            gates[gci] = acc;
        }
        for (long i = 0; i < 2; ++i) {
            double in_g = sig(gates[i]);
            double fg = sig(gates[2 + i]);
            double gg = std::tanh(gates[4 + i]);
            double og = sig(gates[6 + i]);
            c[i] = fg * c[i] + in_g * gg;
            h[i] = og * std::tanh(c[i]);
        }
        for (long i = 0; i < 2; ++i)
            CHECK(latents->value.data[static_cast<size_t>(t * 2 + i)] == doctest::Approx(h[i]).epsilon(1e-6));
    }
}

TEST_CASE("autoencoder forward") {
    auto model = make_model<float>(Arch::Ae);
    const long d = model.config().d_latent;

    SUBCASE("minimal suffix: decoder makes exactly one prediction") {
        auto prefix = toy_block(1, 3, 8);
        TokenBlock sufin;  // decoder input is just [SOS]
        sufin.acts = IMat(1, 1, Vocabulary::kSos);
        sufin.times = FMat(1, 1, 0.f);
        sufin.lengths = {1};
        auto latents = model.forward_encdec(prefix, sufin, false, nullptr);
        CHECK(latents->value.shape == std::vector<long>{1, 1, d});
    }
    SUBCASE("changing the prefix changes decoder outputs") {
        auto prefix = toy_block(1, 3, 8, 5);
        auto sufin = toy_block(1, 2, 8, 6);
        sufin.acts.at(0, 0) = Vocabulary::kSos;
        sufin.times.at(0, 0) = 0.f;
        auto base = model.forward_encdec(prefix, sufin, false, nullptr);
        auto prefix2 = prefix;
        prefix2.acts.at(0, 1) = prefix.acts.at(0, 1) == 4 ? 5 : 4;
        auto moved = model.forward_encdec(prefix2, sufin, false, nullptr);
        double diff = 0;
        for (long i = 0; i < base->value.size(); ++i)
            diff = std::max(diff, std::fabs(static_cast<double>(base->value.data[static_cast<size_t>(i)]) -
                                            moved->value.data[static_cast<size_t>(i)]));
        CHECK(diff > 0.0);
    }
    SUBCASE("decoder causality over the suffix input") {
        auto prefix = toy_block(1, 3, 8, 5);
        auto sufin = toy_block(1, 4, 8, 6);
        sufin.acts.at(0, 0) = Vocabulary::kSos;
        sufin.times.at(0, 0) = 0.f;
        auto base = model.forward_encdec(prefix, sufin, false, nullptr);
        auto sufin2 = sufin;
        sufin2.times.at(0, 2) += 0.4f;
        auto perturbed = model.forward_encdec(prefix, sufin2, false, nullptr);
        CHECK(max_diff_before(base->value, perturbed->value, 2, d) == 0.0);
    }
    SUBCASE("mixed prefix lengths select each row's own final encoder state") {
        // batch row 1 is a shorter prefix padded to the batch width; its
        // context must equal the state of running it unpadded
        auto prefix = toy_block(2, 4, 8, 5);
        prefix.lengths = {4, 2};
        prefix.acts.at(1, 2) = Vocabulary::kPad;
        prefix.acts.at(1, 3) = Vocabulary::kPad;
        prefix.times.at(1, 2) = prefix.times.at(1, 3) = 0.f;

        TokenBlock solo;
        solo.acts = IMat(1, 2);
        solo.times = FMat(1, 2);
        solo.lengths = {2};
        for (long i = 0; i < 2; ++i) {
            solo.acts.at(0, i) = prefix.acts.at(1, i);
            solo.times.at(0, i) = prefix.times.at(1, i);
        }
        auto batched = model.encode_prefix_lstm(prefix, false, nullptr);
        auto single = model.encode_prefix_lstm(solo, false, nullptr);
        for (size_t l = 0; l < batched.hc.size(); ++l)
            for (long i = 0; i < d; ++i) {
                CHECK(batched.hc[l].first->value.data[static_cast<size_t>(d + i)] ==
                      doctest::Approx(single.hc[l].first->value.data[static_cast<size_t>(i)]).epsilon(1e-6));
            }
    }
}

TEST_CASE("aegan discriminator") {
    auto model = make_model<float>(Arch::AeGan);
    const int v = model.config().vocab_size;

    std::vector<std::pair<NodePtr<float>, NodePtr<float>>> steps;
    RngStream rng(4);
    for (int t = 0; t < 3; ++t) {
        Tensor<float> simplex({2, v});
        for (long r = 0; r < 2; ++r) {
            double sum = 0;
            std::vector<double> raw(static_cast<size_t>(v));
            for (auto& x : raw) {
                x = rng.uniform01();
                sum += x;
            }
            for (long i = 0; i < v; ++i)
                simplex.data[static_cast<size_t>(r * v + i)] = static_cast<float>(raw[static_cast<size_t>(i)] / sum);
        }
        Tensor<float> times({2});
        times.data = {static_cast<float>(rng.uniform01()), static_cast<float>(rng.uniform01())};
        steps.emplace_back(leaf(simplex), leaf(times));
    }

    auto logit = model.disc.forward_logit(steps);
    CHECK(logit->value.shape == std::vector<long>{2, 1});
    auto p = diffcore::sigmoid(logit);
    for (long r = 0; r < 2; ++r) {
        CHECK(p->value.data[static_cast<size_t>(r)] > 0.f);
        CHECK(p->value.data[static_cast<size_t>(r)] < 1.f);
    }
    auto p2 = diffcore::sigmoid(model.disc.forward_logit(steps));
    CHECK(p->value.data == p2->value.data);  // deterministic in eval conditions

    // gradient flows from the discriminator output back to generator logits
    // through the gumbel-softmax sample
    auto dmodel = make_model<double>(Arch::AeGan, 6, 8, 1, 2);
    Tensor<double> raw_logits({1, 6});
    RngStream lr(11);
    for (auto& x : raw_logits.data) x = lr.uniform01() * 2 - 1;
    auto logits_leaf = leaf(raw_logits, true);
    auto report = diffcore::check_gradients<double>({logits_leaf}, [&]() {
        RngStream grng(99);
        auto sample = diffcore::gumbel_softmax_sample(logits_leaf, 1.0, grng);
        Tensor<double> t({1});
        t.data = {0.5};
        std::vector<std::pair<NodePtr<double>, NodePtr<double>>> chain{{sample, leaf(t)}};
        return diffcore::mean_all(diffcore::logsigmoid(dmodel.disc.forward_logit(chain)));
    });
    CHECK(report.max_rel_err <= 1e-3);
}

TEST_CASE("attention masks") {
    SUBCASE("n=3 causal mask matches the triangular definition") {
        auto m = causal_mask<float>({3}, 3);
        const float ninf = neg_inf<float>();
        std::vector<float> expect = {0, ninf, ninf, 0, 0, ninf, 0, 0, 0};
        CHECK(m.data == expect);
    }
    SUBCASE("pad keys are blocked for every query") {
        auto m = bidirectional_mask<float>({2}, 3);
        for (long q = 0; q < 3; ++q) {
            CHECK(m.data[static_cast<size_t>(q * 3 + 0)] == 0.f);
            CHECK(m.data[static_cast<size_t>(q * 3 + 1)] == 0.f);
            CHECK(m.data[static_cast<size_t>(q * 3 + 2)] == neg_inf<float>());
        }
    }
}

TEST_CASE("transformer encoder-decoder") {
    auto model = make_model<float>(Arch::Transformer);
    const long d = model.config().d_latent;
    auto prefix = toy_block(1, 4, 8, 21);
    auto sufin = toy_block(1, 4, 8, 22);
    sufin.acts.at(0, 0) = Vocabulary::kSos;
    sufin.times.at(0, 0) = 0.f;

    SUBCASE("attention rows sum to 1 over allowed positions") {
        auto q = leaf(diffcore::Tensor<float>({1, 3, d}, 0.3f));
        auto mask = causal_mask<float>({3}, 3);
        auto att = multi_head_attention(model.dec_tf.blocks[0].self_attn, q, q, mask,
                                        model.config().heads);
        CHECK(att->value.shape == std::vector<long>{1, 3, d});
    }
    SUBCASE("decoder outputs are causal in the suffix input and sensitive to the whole prefix") {
        auto base = model.forward_encdec(prefix, sufin, false, nullptr);
        auto sufin2 = sufin;
        sufin2.times.at(0, 3) += 0.5f;
        auto perturbed = model.forward_encdec(prefix, sufin2, false, nullptr);
        CHECK(max_diff_before(base->value, perturbed->value, 3, d) <= 1e-6);

        // encoder bidirectionality: decoder position 0 reacts to a late prefix change
        auto prefix2 = prefix;
        prefix2.times.at(0, 3) += 0.5f;
        auto moved = model.forward_encdec(prefix2, sufin, false, nullptr);
        CHECK(max_diff_before(base->value, moved->value, 1, d) > 0.0);
    }
}

TEST_CASE("gpt forward") {
    auto model = make_model<float>(Arch::Gpt);
    const long d = model.config().d_latent;
    auto blk = toy_block(2, 5, 8, 31);

    auto latents = model.forward_tokens(blk, false, nullptr);
    CHECK(latents->value.shape == std::vector<long>{2, 5, d});

    auto blk2 = blk;
    blk2.times.at(0, 4) += 0.3f;
    blk2.acts.at(0, 4) = 5;
    auto perturbed = model.forward_tokens(blk2, false, nullptr);
    CHECK(max_diff_before(latents->value, perturbed->value, 4, d) <= 1e-6);

    // one full block gradient check in 64-bit
    auto dmodel = make_model<double>(Arch::Gpt, 6, 8, 1, 2);
    auto dblk = toy_block(1, 3, 6, 32);
    std::vector<NodePtr<double>> leaves = {dmodel.emb.table, dmodel.emb.time_vec};
    auto report = diffcore::check_gradients<double>(leaves, [&]() {
        return diffcore::mean_all(diffcore::tanh_op(dmodel.forward_tokens(dblk, false, nullptr)));
    });
    CHECK(report.max_rel_err <= 1e-3);
}

TEST_CASE("bert forward") {
    auto model = make_model<float>(Arch::Bert);
    const long d = model.config().d_latent;

    SUBCASE("masked position reacts to context on both sides") {
        auto blk = toy_block(1, 5, 8, 41);
        blk.acts.at(0, 2) = Vocabulary::kMask;
        blk.times.at(0, 2) = 0.f;
        auto base = model.forward_tokens(blk, false, nullptr);

        auto left = blk;
        left.acts.at(0, 0) = left.acts.at(0, 0) == 4 ? 5 : 4;
        auto right = blk;
        right.acts.at(0, 4) = right.acts.at(0, 4) == 4 ? 5 : 4;
        double dl = 0, dr = 0;
        for (long i = 0; i < d; ++i) {
            size_t j = static_cast<size_t>(2 * d + i);
            dl = std::max(dl, std::fabs(static_cast<double>(base->value.data[j]) -
                                        model.forward_tokens(left, false, nullptr)->value.data[j]));
            dr = std::max(dr, std::fabs(static_cast<double>(base->value.data[j]) -
                                        model.forward_tokens(right, false, nullptr)->value.data[j]));
        }
        CHECK(dl > 0.0);
        CHECK(dr > 0.0);
    }
    SUBCASE("all-masked input of length 1 produces a finite prediction") {
        TokenBlock blk;
        blk.acts = IMat(1, 1, Vocabulary::kMask);
        blk.times = FMat(1, 1, 0.f);
        blk.lengths = {1};
        auto latents = model.forward_tokens(blk, false, nullptr);
        auto [logits, times] = model.readout(latents);
        for (float v : logits->value.data) CHECK(std::isfinite(v));
        IMat tgt(1, 1, 5);
        FMat mask(1, 1, 1.f);
        auto loss = diffcore::cross_entropy_masked(logits, tgt, mask);
        CHECK(std::isfinite(loss->value.data[0]));
    }
}

TEST_CASE("wavenet forward and receptive field") {
    // L=4 and filter 2: receptive field is exactly 16 positions
    ModelConfig cfg;
    cfg.arch = Arch::WaveNet;
    cfg.layers = 4;
    cfg.d_latent = 8;
    cfg.heads = 1;
    cfg.conv_filter = 2;
    cfg.dropout = 0.0;
    cfg.vocab_size = 6;
    cfg.max_len = 24;
    RngStream rng(55);
    Model<double> model(cfg, rng);

    const long n = 20, d = cfg.d_latent;
    auto blk = toy_block(1, n, 6, 71);
    auto latents = model.forward_tokens(blk, false, nullptr);
    CHECK(latents->value.shape == std::vector<long>{1, n, d});  // output length = input length

    // gradient sparsity at output position t: nonzero iff t - 15 <= j <= t
    RngStream zr(3);
    diffcore::Tensor<double> zt({1, n, d});
    for (auto& v : zt.data) v = zr.uniform01() - 0.5;
    auto z = leaf(zt, true);
    const long t = 17;
    auto out = model.conv.forward(z, false, nullptr);
    auto loss = diffcore::sum_all(diffcore::slice(out, 1, t, 1));
    diffcore::backward(loss);

    const long receptive = 16;  // 2^(L-1) * filter
    for (long j = 0; j < n; ++j) {
        double g = 0;
        for (long i = 0; i < d; ++i)
            g = std::max(g, std::fabs(z->grad.data[static_cast<size_t>(j * d + i)]));
        if (j > t) CHECK(g == 0.0);
        else if (t - j >= receptive) CHECK(g == 0.0);
        else CHECK(g > 0.0);
    }
}

TEST_CASE("readout heads") {
    auto model = make_model<float>(Arch::Gpt);
    auto blk = toy_block(2, 3, 8, 61);
    auto latents = model.forward_tokens(blk, false, nullptr);
    auto [logits, times] = model.readout(latents);
    CHECK(logits->value.shape == std::vector<long>{2, 3, 8});
    CHECK(times->value.shape == std::vector<long>{2, 3});
    auto probs = diffcore::softmax_lastdim(logits);
    for (long r = 0; r < 6; ++r) {
        double sum = 0;
        for (long c = 0; c < 8; ++c) sum += probs->value.data[static_cast<size_t>(r * 8 + c)];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }

    // joint gradient check through both heads
    auto dmodel = make_model<double>(Arch::WaveNet, 6, 8, 2, 1);
    auto dblk = toy_block(1, 4, 6, 62);
    IMat tgt(1, 4, 4);
    FMat ttgt(1, 4, 0.4f);
    FMat mask(1, 4, 1.f);
    std::vector<NodePtr<double>> leaves = {dmodel.heads.activity.w, dmodel.heads.activity.b,
                                           dmodel.heads.time.w, dmodel.heads.time.b};
    auto report = diffcore::check_gradients<double>(leaves, [&]() {
        auto latents2 = dmodel.forward_tokens(dblk, false, nullptr);
        auto [lg, tm] = dmodel.readout(latents2);
        return diffcore::add(diffcore::cross_entropy_masked(lg, tgt, mask),
                             diffcore::mse_masked(tm, ttgt, mask));
    });
    CHECK(report.max_rel_err <= 1e-3);
}

TEST_CASE("pad isolation: appended pad columns leave true positions untouched") {
    for (Arch arch : {Arch::Lstm, Arch::Gpt, Arch::Bert, Arch::WaveNet}) {
        CAPTURE(arch_name(arch));
        auto model = make_model<float>(arch);
        const long d = model.config().d_latent;
        auto blk = toy_block(2, 4, 8, 81);
        auto base = model.forward_tokens(blk, false, nullptr);

        TokenBlock padded = blk;
        padded.acts = IMat(2, 6, Vocabulary::kPad);
        padded.times = FMat(2, 6, 0.f);
        for (long r = 0; r < 2; ++r)
            for (long i = 0; i < 4; ++i) {
                padded.acts.at(r, i) = blk.acts.at(r, i);
                padded.times.at(r, i) = blk.times.at(r, i);
            }
        auto wide = model.forward_tokens(padded, false, nullptr);
        double worst = 0;
        for (long r = 0; r < 2; ++r)
            for (long i = 0; i < 4; ++i)
                for (long c = 0; c < d; ++c)
                    worst = std::max(worst, std::fabs(static_cast<double>(
                                                base->value.data[static_cast<size_t>((r * 4 + i) * d + c)]) -
                                            wide->value.data[static_cast<size_t>((r * 6 + i) * d + c)]));
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("parameter counts are a pure function of the configuration") {
    // defaults: L=4, d=128, H=4, filter=2, V=12
    auto count = [](Arch arch) {
        ModelConfig cfg;
        cfg.arch = arch;
        cfg.vocab_size = 12;
        cfg.max_len = 20;
        RngStream rng(1);
        return Model<float>(cfg, rng).param_count();
    };
    // embed 1664, readout 1677; lstm layer 131584; plain block 198272,
    // cross block 264576, final norm 256; conv layer 32896; disc 133377
    CHECK(count(Arch::Lstm) == 529677);
    CHECK(count(Arch::Ae) == 1056013);
    CHECK(count(Arch::AeGan) == 1189390);
    CHECK(count(Arch::Gpt) == 796685);
    CHECK(count(Arch::Bert) == 796685);
    CHECK(count(Arch::Transformer) == 1855245);
    CHECK(count(Arch::WaveNet) == 134925);
}
