#include "suffixbench/models/model.hpp"

#include <cstring>

#include "suffixbench/diffcore/checkpoint.hpp"

namespace suffixbench::models {

const char* arch_name(Arch a) {
    switch (a) {
        case Arch::Lstm: return "lstm";
        case Arch::Ae: return "ae";
        case Arch::AeGan: return "aegan";
        case Arch::Transformer: return "transformer";
        case Arch::Gpt: return "gpt";
        case Arch::Bert: return "bert";
        case Arch::WaveNet: return "wavenet";
    }
    return "unknown";
}

Arch arch_from_string(const std::string& s) {
    if (s == "lstm") return Arch::Lstm;
    if (s == "ae") return Arch::Ae;
    if (s == "aegan" || s == "ae-gan") return Arch::AeGan;
    if (s == "transformer") return Arch::Transformer;
    if (s == "gpt") return Arch::Gpt;
    if (s == "bert") return Arch::Bert;
    if (s == "wavenet") return Arch::WaveNet;
    throw UsageError("unknown architecture: " + s);
}

TargetLayout layout_for(Arch a) {
    switch (a) {
        case Arch::Lstm: return TargetLayout::NextEvent;
        case Arch::Ae:
        case Arch::AeGan:
        case Arch::Transformer: return TargetLayout::PrefixToShiftedSuffix;
        case Arch::Bert: return TargetLayout::MaskedReconstruction;
        case Arch::Gpt:
        case Arch::WaveNet: return TargetLayout::FullShifted;
    }
    throw Error("unknown architecture");
}

Bundle<float> make_bundle(const ModelConfig& cfg, const Vocabulary& vocab, const MinMaxScaler& scaler,
                          std::uint64_t init_seed) {
    Bundle<float> b;
    b.cfg = cfg;
    b.vocab = vocab;
    b.scaler = scaler;
    RngStream init_rng = substream(init_seed, std::string("init:") + arch_name(cfg.arch));
    b.model = std::make_shared<Model<float>>(cfg, init_rng);
    return b;
}

// ---------------------------------------------------------------------------
// Checkpoint container: model-config header + vocabulary + scaler + parameters.

namespace {

constexpr char kBundleMagic[8] = {'S', 'B', 'M', 'D', 'L', '0', '0', '1'};

}  // namespace

void save_bundle(const std::filesystem::path& path, const Bundle<float>& bundle) {
    std::string out;
    out.append(kBundleMagic, sizeof(kBundleMagic));
    diffcore::detail::put_string(out, arch_name(bundle.cfg.arch));
    diffcore::detail::put_raw<std::int32_t>(out, bundle.cfg.layers);
    diffcore::detail::put_raw<std::int32_t>(out, bundle.cfg.d_latent);
    diffcore::detail::put_raw<std::int32_t>(out, bundle.cfg.heads);
    diffcore::detail::put_raw<std::int32_t>(out, bundle.cfg.conv_filter);
    diffcore::detail::put_raw<double>(out, bundle.cfg.dropout);
    diffcore::detail::put_raw<std::int32_t>(out, bundle.cfg.vocab_size);
    diffcore::detail::put_raw<std::int32_t>(out, bundle.cfg.max_len);
    diffcore::detail::put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(bundle.vocab.size()));
    for (const auto& name : bundle.vocab.names()) diffcore::detail::put_string(out, name);
    diffcore::detail::put_raw<std::uint8_t>(out, bundle.scaler.fitted ? 1 : 0);
    diffcore::detail::put_raw<double>(out, bundle.scaler.min_seconds);
    diffcore::detail::put_raw<double>(out, bundle.scaler.max_seconds);
    diffcore::detail::put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(bundle.meta.size()));
    for (const auto& [k, v] : bundle.meta) {
        diffcore::detail::put_string(out, k);
        diffcore::detail::put_string(out, v);
    }
    diffcore::append_param_records(out, diffcore::snapshot_params(bundle.model->params()));
    write_file(path, out);
}

Bundle<float> load_bundle(const std::filesystem::path& path) {
    const std::string content = slurp_file(path);
    if (content.size() < sizeof(kBundleMagic) ||
        content.compare(0, sizeof(kBundleMagic), kBundleMagic, sizeof(kBundleMagic)) != 0)
        throw DataError("not a checkpoint file: " + path.string());
    diffcore::detail::RawReader r{content, sizeof(kBundleMagic)};

    ModelConfig cfg;
    cfg.arch = arch_from_string(r.get_string());
    cfg.layers = r.get<std::int32_t>();
    cfg.d_latent = r.get<std::int32_t>();
    cfg.heads = r.get<std::int32_t>();
    cfg.conv_filter = r.get<std::int32_t>();
    cfg.dropout = r.get<double>();
    cfg.vocab_size = r.get<std::int32_t>();
    cfg.max_len = r.get<std::int32_t>();

    Vocabulary vocab;
    auto vocab_size = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < vocab_size; ++i) {
        std::string name = r.get_string();
        if (i >= Vocabulary::kNumSpecials) vocab.add(name);
    }
    MinMaxScaler scaler;
    scaler.fitted = r.get<std::uint8_t>() != 0;
    scaler.min_seconds = r.get<double>();
    scaler.max_seconds = r.get<double>();
    scaler.degenerate = scaler.max_seconds == scaler.min_seconds;

    std::map<std::string, std::string> meta;
    auto meta_count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < meta_count; ++i) {
        std::string k = r.get_string();
        meta[k] = r.get_string();
    }
    auto records = diffcore::read_param_records(r);

    Bundle<float> b = make_bundle(cfg, vocab, scaler, 0);
    b.meta = std::move(meta);
    diffcore::restore_params(b.model->params(), records);
    return b;
}

}  // namespace suffixbench::models
