#pragma once

#include <map>
#include <memory>
#include <string>

#include "suffixbench/eventlog.hpp"
#include "suffixbench/models/layers.hpp"

namespace suffixbench::models {

enum class Arch { Lstm, Ae, AeGan, Transformer, Gpt, Bert, WaveNet };

const char* arch_name(Arch a);
Arch arch_from_string(const std::string& s);
TargetLayout layout_for(Arch a);

struct ModelConfig {
    Arch arch = Arch::Gpt;
    int layers = 4;
    int d_latent = 128;
    int heads = 4;       // transformer family
    int conv_filter = 2;  // wavenet
    double dropout = 0.3;
    int vocab_size = 0;
    int max_len = 0;  // longest training trace, the generation cap

    void validate() const {
        if (layers < 1) throw UsageError("layers must be >= 1");
        if (d_latent % heads != 0) throw UsageError("d_latent must be divisible by heads");
        if (vocab_size <= Vocabulary::kNumSpecials) throw UsageError("vocab_size too small");
        if (max_len < 2) throw UsageError("max_len must be >= 2");
    }
};

// Learnable fusion of the two event modalities: activity projection plus a
// broadcast-expanded time scalar, summed into one latent vector per position.
template <class S>
struct EmbeddingFusion {
    NodePtr<S> table;     // [V, d]
    NodePtr<S> time_vec;  // [d]

    static EmbeddingFusion create(ParamSet<S>& ps, long vocab, long d, RngStream& rng) {
        EmbeddingFusion e;
        e.table = ps.add("embed.activity", {vocab, d}, Init::FanInUniform, vocab, rng);
        e.time_vec = ps.add("embed.time", {d}, Init::FanInUniform, 1, rng);
        return e;
    }

    NodePtr<S> embed(const IMat& acts, const FMat& times) const {
        Tensor<S> t({times.rows, times.cols});
        for (size_t i = 0; i < times.v.size(); ++i) t.data[i] = static_cast<S>(times.v[i]);
        auto act_part = diffcore::embedding_lookup(table, acts);
        auto time_part = diffcore::outer_scale(diffcore::leaf(std::move(t)), time_vec);
        return diffcore::add(act_part, time_part);
    }

    NodePtr<S> embed(const TokenBlock& block) const { return embed(block.acts, block.times); }

    // Soft route for sampled simplex inputs: [B,V] x [V,d] + t * time_vec.
    NodePtr<S> embed_soft(NodePtr<S> simplex, NodePtr<S> times_col) const {
        long b = simplex->value.dim(0), d = table->value.dim(1);
        auto act_part = diffcore::matmul(simplex, table);
        auto time_part = diffcore::reshape(
            diffcore::outer_scale(diffcore::reshape(times_col, {b, 1}), time_vec), {b, d});
        return diffcore::add(act_part, time_part);
    }
};

template <class S>
struct ReadoutHeads {
    LinearLayer<S> activity;  // d -> V
    LinearLayer<S> time;      // d -> 1

    static ReadoutHeads create(ParamSet<S>& ps, long d, long vocab, RngStream& rng) {
        ReadoutHeads r;
        r.activity = LinearLayer<S>::create(ps, "readout.activity", d, vocab, rng);
        r.time = LinearLayer<S>::create(ps, "readout.time", d, 1, rng);
        return r;
    }

    // (logits [B,n,V], times [B,n]) read from the same latent states
    std::pair<NodePtr<S>, NodePtr<S>> apply(NodePtr<S> latents) const {
        long b = latents->value.dim(0), n = latents->value.dim(1);
        auto logits = activity.apply(latents);
        auto times = diffcore::reshape(time.apply(latents), {b, n});
        return {logits, times};
    }
};

// Sequential discriminator over fused (simplex activity, time) steps.
template <class S>
struct Discriminator {
    NodePtr<S> table;     // [V, d]
    NodePtr<S> time_vec;  // [d]
    LstmLayer<S> rnn;
    LinearLayer<S> head;  // d -> 1

    static Discriminator create(ParamSet<S>& ps, long vocab, long d, RngStream& rng) {
        Discriminator disc;
        disc.table = ps.add("disc.embed.activity", {vocab, d}, Init::FanInUniform, vocab, rng);
        disc.time_vec = ps.add("disc.embed.time", {d}, Init::FanInUniform, 1, rng);
        disc.rnn = LstmLayer<S>::create(ps, "disc.rnn", d, d, rng);
        disc.head = LinearLayer<S>::create(ps, "disc.head", d, 1, rng);
        return disc;
    }

    // steps: per position (simplex or one-hot [B,V], time column [B]).
    // Returns the pre-sigmoid logit [B,1].
    NodePtr<S> forward_logit(const std::vector<std::pair<NodePtr<S>, NodePtr<S>>>& steps) const {
        if (steps.empty()) throw Error("discriminator: empty sequence");
        long b = steps[0].first->value.dim(0);
        long d = table->value.dim(1);
        auto h = diffcore::leaf(Tensor<S>({b, d}));
        auto c = diffcore::leaf(Tensor<S>({b, d}));
        for (const auto& [simplex, times] : steps) {
            auto act_part = diffcore::matmul(simplex, table);
            auto time_part = diffcore::reshape(
                diffcore::outer_scale(diffcore::reshape(times, {b, 1}), time_vec), {b, d});
            auto z = diffcore::add(act_part, time_part);
            std::tie(h, c) = rnn.step(z, h, c);
        }
        return head.apply(h);
    }
};

// One class hosts all seven architectures; only the stacks matching the
// configured architecture are instantiated.
template <class S>
class Model {
public:
    Model(const ModelConfig& cfg, RngStream& init_rng) : cfg_(cfg) {
        cfg_.validate();
        long d = cfg_.d_latent, v = cfg_.vocab_size;
        emb = EmbeddingFusion<S>::create(ps_, v, d, init_rng);
        switch (cfg_.arch) {
            case Arch::Lstm:
                lstm = LstmStack<S>::create(ps_, "lstm", cfg_.layers, d, cfg_.dropout, init_rng);
                break;
            case Arch::Ae:
            case Arch::AeGan:
                enc_lstm = LstmStack<S>::create(ps_, "enc", cfg_.layers, d, cfg_.dropout, init_rng);
                dec_lstm = LstmStack<S>::create(ps_, "dec", cfg_.layers, d, cfg_.dropout, init_rng);
                break;
            case Arch::Transformer:
                enc_tf = TransformerStack<S>::create(ps_, "enc", cfg_.layers, d, cfg_.heads, false,
                                                     cfg_.dropout, init_rng);
                dec_tf = TransformerStack<S>::create(ps_, "dec", cfg_.layers, d, cfg_.heads, true,
                                                     cfg_.dropout, init_rng);
                break;
            case Arch::Gpt:
                dec_tf = TransformerStack<S>::create(ps_, "dec", cfg_.layers, d, cfg_.heads, false,
                                                     cfg_.dropout, init_rng);
                break;
            case Arch::Bert:
                enc_tf = TransformerStack<S>::create(ps_, "enc", cfg_.layers, d, cfg_.heads, false,
                                                     cfg_.dropout, init_rng);
                break;
            case Arch::WaveNet:
                conv = ConvStack<S>::create(ps_, "conv", cfg_.layers, d, cfg_.conv_filter, cfg_.dropout,
                                            init_rng);
                break;
        }
        heads = ReadoutHeads<S>::create(ps_, d, v, init_rng);
        if (cfg_.arch == Arch::AeGan) disc = Discriminator<S>::create(ps_, v, d, init_rng);
    }

    const ModelConfig& config() const { return cfg_; }
    TargetLayout layout() const { return layout_for(cfg_.arch); }

    std::vector<NodePtr<S>>& params() { return ps_.params; }
    const std::vector<NodePtr<S>>& params() const { return ps_.params; }

    // Parameters updated by the generator/autoencoder objective (everything
    // except the discriminator) and by the adversarial objective.
    std::vector<NodePtr<S>> generator_params() const {
        std::vector<NodePtr<S>> out;
        for (const auto& p : ps_.params)
            if (p->name.rfind("disc.", 0) != 0) out.push_back(p);
        return out;
    }
    std::vector<NodePtr<S>> discriminator_params() const {
        std::vector<NodePtr<S>> out;
        for (const auto& p : ps_.params)
            if (p->name.rfind("disc.", 0) == 0) out.push_back(p);
        return out;
    }

    long param_count() const {
        long n = 0;
        for (const auto& p : ps_.params) n += p->value.size();
        return n;
    }

    bool uses_positions() const {
        return cfg_.arch == Arch::Transformer || cfg_.arch == Arch::Gpt || cfg_.arch == Arch::Bert;
    }

    NodePtr<S> embed_with_positions(const TokenBlock& block) const {
        auto z = emb.embed(block);
        if (uses_positions()) {
            auto pe = diffcore::leaf(
                sinusoidal_positions<S>(block.rows(), block.cols(), cfg_.d_latent));
            z = diffcore::add(z, pe);
        }
        return z;
    }

    // Latents for the single-stream layouts (①, ③, ④).
    NodePtr<S> forward_tokens(const TokenBlock& block, bool train, RngStream* rng) const {
        auto z = embed_with_positions(block);
        switch (cfg_.arch) {
            case Arch::Lstm: {
                auto st = lstm.initial_state(block.rows());
                return lstm.forward_seq(z, st, train, rng);
            }
            case Arch::Gpt: {
                auto mask = causal_mask<S>(block.lengths, block.cols());
                return dec_tf.forward(z, mask, nullptr, nullptr, train, rng);
            }
            case Arch::Bert: {
                auto mask = bidirectional_mask<S>(block.lengths, block.cols());
                return enc_tf.forward(z, mask, nullptr, nullptr, train, rng);
            }
            case Arch::WaveNet: return conv.forward(z, train, rng);
            default: throw UsageError("forward_tokens: architecture uses the encoder-decoder path");
        }
    }

    // Decoder latents for layout ②: prefix encoded, [SOS]-started suffix decoded.
    NodePtr<S> forward_encdec(const TokenBlock& prefix, const TokenBlock& sufin, bool train,
                              RngStream* rng) const {
        switch (cfg_.arch) {
            case Arch::Ae:
            case Arch::AeGan: {
                auto enc_states = encode_prefix_lstm(prefix, train, rng);
                auto z = emb.embed(sufin);
                return dec_lstm.forward_seq(z, enc_states, train, rng);
            }
            case Arch::Transformer: {
                auto memory = encode_prefix_transformer(prefix, train, rng);
                return decode_transformer(memory, prefix.lengths, sufin, train, rng);
            }
            default: throw UsageError("forward_encdec: architecture uses the single-stream path");
        }
    }

    // Encoder pass over the prefix; the final (h,c) stack is the context
    // handed to the decoder as its initial state.
    typename LstmStack<S>::State encode_prefix_lstm(const TokenBlock& prefix, bool train,
                                                    RngStream* rng) const {
        auto z = emb.embed(prefix);
        long b = prefix.rows(), n = prefix.cols(), d = cfg_.d_latent;
        // Rows may have different true lengths: run full width, then keep the
        // state observed at each row's last true position.
        auto st = enc_lstm.initial_state(b);
        std::vector<typename LstmStack<S>::State> per_step;
        per_step.reserve(static_cast<size_t>(n));
        for (long t = 0; t < n; ++t) {
            auto x = diffcore::reshape(diffcore::slice(z, 1, t, 1), {b, d});
            enc_lstm.step(x, st, train, rng);
            per_step.push_back(st);
        }
        bool uniform = true;
        for (int len : prefix.lengths)
            if (len != prefix.lengths[0]) uniform = false;
        if (uniform) return per_step[static_cast<size_t>(prefix.lengths[0] - 1)];

        // Mix states row-wise: state[row] = per_step[len(row)-1][row].
        typename LstmStack<S>::State out;
        for (size_t l = 0; l < enc_lstm.layers.size(); ++l) {
            NodePtr<S> h_mixed, c_mixed;
            for (long t = 0; t < n; ++t) {
                std::vector<S> sel(static_cast<size_t>(b), S(0));
                bool any = false;
                for (long r = 0; r < b; ++r)
                    if (prefix.lengths[static_cast<size_t>(r)] - 1 == t) {
                        sel[static_cast<size_t>(r)] = S(1);
                        any = true;
                    }
                if (!any) continue;
                auto h_part = diffcore::mul_rows(per_step[static_cast<size_t>(t)].hc[l].first, sel);
                auto c_part = diffcore::mul_rows(per_step[static_cast<size_t>(t)].hc[l].second, sel);
                h_mixed = h_mixed ? diffcore::add(h_mixed, h_part) : h_part;
                c_mixed = c_mixed ? diffcore::add(c_mixed, c_part) : c_part;
            }
            out.hc.emplace_back(h_mixed, c_mixed);
        }
        return out;
    }

    NodePtr<S> encode_prefix_transformer(const TokenBlock& prefix, bool train, RngStream* rng) const {
        auto z = embed_with_positions(prefix);
        auto mask = bidirectional_mask<S>(prefix.lengths, prefix.cols());
        return enc_tf.forward(z, mask, nullptr, nullptr, train, rng);
    }

    NodePtr<S> decode_transformer(NodePtr<S> memory, const std::vector<int>& memory_lengths,
                                  const TokenBlock& sufin, bool train, RngStream* rng) const {
        auto z = embed_with_positions(sufin);
        auto self_mask = causal_mask<S>(sufin.lengths, sufin.cols());
        auto cmask = cross_mask<S>(memory_lengths, sufin.cols(), memory->value.dim(1));
        return dec_tf.forward(z, self_mask, memory, &cmask, train, rng);
    }

    std::pair<NodePtr<S>, NodePtr<S>> readout(NodePtr<S> latents) const { return heads.apply(latents); }

    EmbeddingFusion<S> emb;
    ReadoutHeads<S> heads;
    LstmStack<S> lstm;
    LstmStack<S> enc_lstm, dec_lstm;
    TransformerStack<S> enc_tf, dec_tf;
    ConvStack<S> conv;
    Discriminator<S> disc;

private:
    ModelConfig cfg_;
    ParamSet<S> ps_;
};

// A trained model with everything evaluation needs to run standalone.
template <class S>
struct Bundle {
    ModelConfig cfg;
    Vocabulary vocab;
    MinMaxScaler scaler;
    std::map<std::string, std::string> meta;  // training provenance, surfaced in report headers
    std::shared_ptr<Model<S>> model;
};

Bundle<float> make_bundle(const ModelConfig& cfg, const Vocabulary& vocab, const MinMaxScaler& scaler,
                          std::uint64_t init_seed);
void save_bundle(const std::filesystem::path& path, const Bundle<float>& bundle);
Bundle<float> load_bundle(const std::filesystem::path& path);

}  // namespace suffixbench::models
