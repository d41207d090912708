#include "suffixbench/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <iostream>
#include <map>

#include "suffixbench/evaluation.hpp"
#include "suffixbench/preprocess.hpp"
#include "suffixbench/synthetic.hpp"
#include "suffixbench/training.hpp"

namespace suffixbench::cli {

namespace {

namespace fs = std::filesystem;
using models::Arch;

struct ConfigLines {
    std::vector<std::string> lines;

    void add(const std::string& key, const std::string& value) { lines.push_back(key + "=" + value); }
    void add(const std::string& key, double value) { add(key, fmt_double(value)); }
    void add(const std::string& key, long value) { add(key, std::to_string(value)); }
    void add(const std::string& key, std::uint64_t value) { add(key, std::to_string(value)); }
    void add(const std::string& key, int value) { add(key, std::to_string(value)); }

    std::string serialize() const {
        std::string out;
        for (const auto& l : lines) out += l + "\n";
        return out;
    }
};

std::string dataset_tag_of(const fs::path& log_path) { return log_path.stem().string(); }

// ---------------------------------------------------------------------------
// ingest

struct IngestArgs {
    std::string input;
    std::string format = "csv";
    std::string out_dir;
    CsvColumns columns;
};

int cmd_ingest(const IngestArgs& a) {
    EventLog log;
    if (a.format == "csv") log = parse_csv(a.input, a.columns);
    else if (a.format == "xes") log = parse_xes(a.input);
    else throw UsageError("unknown format: " + a.format);

    fs::create_directories(a.out_dir);
    fs::path out_dir(a.out_dir);
    std::string stem = fs::path(a.input).stem().string();
    fs::path log_path = out_dir / (stem + ".sblog");
    save_eventlog(log, log_path);

    ConfigLines cfg;
    cfg.add("command", std::string("ingest"));
    cfg.add("input", a.input);
    cfg.add("format", a.format);
    cfg.add("input_hash", hex64(hash_file(a.input)));
    cfg.add("log_hash", hex64(log_fingerprint(log)));

    std::string vocab_txt;
    for (const auto& l : cfg.lines) vocab_txt += "# " + l + "\n";
    for (int i = 0; i < log.vocabulary.size(); ++i)
        vocab_txt += std::to_string(i) + "\t" + log.vocabulary.name_of(i) + "\n";
    write_file(out_dir / "vocabulary.txt", vocab_txt);

    // Case-length distribution (real events per case) and activity frequencies
    // with the [PAD] count a full right-padding to the longest trace would add.
    std::map<long, long> length_hist;
    std::map<int, long> activity_hist;
    long max_len = 0, total_events = 0;
    for (const auto& t : log.traces) {
        long real = static_cast<long>(t.events.size()) - 1;
        ++length_hist[real];
        max_len = std::max(max_len, static_cast<long>(t.events.size()));
        for (const auto& e : t.events) {
            ++activity_hist[e.activity];
            ++total_events;
        }
    }
    long pad_projection = 0;
    for (const auto& t : log.traces) pad_projection += max_len - static_cast<long>(t.events.size());

    std::string lh;
    for (const auto& l : cfg.lines) lh += "# " + l + "\n";
    lh += "length,count\n";
    for (const auto& [len, count] : length_hist) lh += std::to_string(len) + "," + std::to_string(count) + "\n";
    write_file(out_dir / "length_hist.csv", lh);

    std::string ah;
    for (const auto& l : cfg.lines) ah += "# " + l + "\n";
    ah += "activity,count\n";
    for (const auto& [act, count] : activity_hist)
        ah += log.vocabulary.name_of(act) + "," + std::to_string(count) + "\n";
    ah += "[PAD]," + std::to_string(pad_projection) + "\n";
    write_file(out_dir / "activity_hist.csv", ah);

    write_file(out_dir / "run_config.txt", cfg.serialize());
    std::cout << "ingested " << log.traces.size() << " traces, vocabulary " << log.vocabulary.size()
              << ", into " << log_path.string() << "\n";
    (void)total_events;
    return 0;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::string spec_path;
    long n_traces = 100;
    std::uint64_t seed = 0;
    std::string out_csv;
};

int cmd_synth(const SynthArgs& a) {
    auto spec = synthetic::load_process_spec(a.spec_path);
    auto log = synthetic::sample_log(spec, a.n_traces, a.seed);
    synthetic::write_log_csv(log, a.out_csv);
    std::cout << "sampled " << log.traces.size() << " traces into " << a.out_csv << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string log_path;
    std::string arch = "gpt";
    std::uint64_t seed = 0;
    std::string out_dir;
    training::TrainConfig tcfg;
    training::AdversarialConfig adv;
    int layers = 4;
    int d_latent = 128;
    int heads = 4;
    int conv_filter = 2;
    double dropout = 0.3;
    double train_fraction = 0.8;
    std::string split_from;
    bool force = false;
};

int train_one(const TrainArgs& a, Arch arch, const EventLog& log) {
    const std::string dataset = dataset_tag_of(a.log_path);
    fs::path run_dir = fs::path(a.out_dir) / (dataset + "-" + models::arch_name(arch) + "-" +
                                              std::to_string(a.seed));
    if (fs::exists(run_dir)) {
        if (!a.force) throw DataError("run directory exists, pass --force to overwrite: " + run_dir.string());
        fs::remove_all(run_dir);
    }
    fs::create_directories(run_dir);

    EventLog train_log, eval_log;
    if (!a.split_from.empty()) {
        std::tie(train_log, eval_log) = apply_split_manifest(log, fs::path(a.split_from) / "train.ids",
                                                             fs::path(a.split_from) / "eval.ids");
    } else {
        SplitSpec split{a.train_fraction, a.seed};
        std::tie(train_log, eval_log) = split_train_eval(log, split);
    }
    save_split_manifest(run_dir / "train.ids", train_log.traces);
    save_split_manifest(run_dir / "eval.ids", eval_log.traces);
    std::uint64_t split_hash =
        fnv1a64(slurp_file(run_dir / "train.ids") + "|" + slurp_file(run_dir / "eval.ids"));

    MinMaxScaler scaler = fit_scaler(train_log.traces);
    train_log.time_scaler = eval_log.time_scaler = scaler;

    models::ModelConfig mcfg;
    mcfg.arch = arch;
    mcfg.layers = a.layers;
    mcfg.d_latent = a.d_latent;
    mcfg.heads = a.heads;
    mcfg.conv_filter = a.conv_filter;
    mcfg.dropout = a.dropout;
    mcfg.vocab_size = log.vocabulary.size();
    mcfg.max_len = max_trace_length(train_log);

    training::TrainConfig tcfg = a.tcfg;
    tcfg.seed = a.seed;

    TargetLayout layout = models::layout_for(arch);
    RngStream premask_train = substream(a.seed, "premask_train");
    RngStream premask_eval = substream(a.seed, "premask_eval");
    auto batches = build_batches(train_log, layout, tcfg.batch_size, scaler, &premask_train);
    auto eval_batches = build_batches(eval_log, layout, tcfg.batch_size, scaler, &premask_eval);

    ConfigLines cfg;
    cfg.add("command", std::string("train"));
    cfg.add("log", a.log_path);
    cfg.add("log_hash", hex64(log_fingerprint(log)));
    cfg.add("dataset", dataset);
    cfg.add("arch", std::string(models::arch_name(arch)));
    cfg.add("seed", a.seed);
    cfg.add("layers", mcfg.layers);
    cfg.add("d_latent", mcfg.d_latent);
    cfg.add("heads", mcfg.heads);
    cfg.add("conv_filter", mcfg.conv_filter);
    cfg.add("dropout", mcfg.dropout);
    cfg.add("vocab_size", mcfg.vocab_size);
    cfg.add("max_len", mcfg.max_len);
    cfg.add("max_epochs", tcfg.max_epochs);
    cfg.add("patience", tcfg.patience);
    cfg.add("lr", tcfg.lr);
    cfg.add("w_act", tcfg.w_act);
    cfg.add("w_time", tcfg.w_time);
    cfg.add("batch_size", tcfg.batch_size);
    cfg.add("clip_norm", tcfg.clip_norm);
    cfg.add("train_fraction", a.train_fraction);
    cfg.add("split_hash", hex64(split_hash));
    if (arch == Arch::AeGan) {
        cfg.add("lambda", a.adv.lambda);
        cfg.add("open_loop_p", a.adv.open_loop_p);
        cfg.add("tau_start", a.adv.tau_start);
        cfg.add("tau_end", a.adv.tau_end);
        cfg.add("anneal_fraction", a.adv.anneal_fraction);
    }
    write_file(run_dir / "run_config.txt", cfg.serialize());

    fs::path train_log_path = run_dir / "train_log.txt";
    {
        std::string header;
        for (const auto& l : cfg.lines) header += "# " + l + "\n";
        header += "# epoch\ttrain_loss\teval_loss\tact_loss\ttime_loss\tseconds\n";
        write_file(train_log_path, header);
    }

    auto bundle = models::make_bundle(mcfg, log.vocabulary, scaler, a.seed);
    training::TrainReport report;
    if (arch == Arch::AeGan)
        report = training::train_aegan(*bundle.model, batches, eval_batches, tcfg, a.adv, &train_log_path);
    else
        report = training::train(*bundle.model, batches, eval_batches, tcfg, &train_log_path);

    bundle.meta["dataset"] = dataset;
    bundle.meta["seed"] = std::to_string(a.seed);
    bundle.meta["w_act"] = fmt_double(tcfg.w_act);
    bundle.meta["w_time"] = fmt_double(tcfg.w_time);
    bundle.meta["split_hash"] = hex64(split_hash);
    bundle.meta["log_hash"] = hex64(log_fingerprint(log));
    bundle.meta["epochs_run"] = std::to_string(report.epochs_run);
    bundle.meta["best_epoch"] = std::to_string(report.best_epoch);
    bundle.meta["best_eval_loss"] = fmt_double(report.best_eval, 9);
    save_bundle(run_dir / "checkpoint.bin", bundle);

    std::string summary;
    for (const auto& l : cfg.lines) summary += "# " + l + "\n";
    summary += "epochs_run=" + std::to_string(report.epochs_run) + "\n";
    summary += "stopped_early=" + std::string(report.stopped_early ? "true" : "false") + "\n";
    summary += "best_epoch=" + std::to_string(report.best_epoch) + "\n";
    summary += "best_eval_loss=" + fmt_double(report.best_eval, 9) + "\n";
    summary += "wall_seconds=" + fmt_double(report.wall_seconds, 3) + "\n";
    write_file(run_dir / "train_report.txt", summary);

    std::cout << models::arch_name(arch) << ": " << report.epochs_run << " epochs, best eval loss "
              << fmt_double(report.best_eval, 6) << " at epoch " << report.best_epoch << " ("
              << fmt_double(report.wall_seconds, 1) << "s) -> " << run_dir.string() << "\n";
    return 0;
}

int cmd_train(const TrainArgs& a) {
    EventLog log = load_eventlog(a.log_path);
    std::vector<Arch> archs;
    if (a.arch == "all") {
        archs = {Arch::Lstm, Arch::Ae, Arch::AeGan, Arch::Transformer, Arch::Gpt, Arch::Bert,
                 Arch::WaveNet};
    } else {
        archs = {models::arch_from_string(a.arch)};
    }
    for (Arch arch : archs) {
        int rc = train_one(a, arch, log);
        if (rc != 0) return rc;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
    std::string log_path;
    std::string checkpoint;
    std::string out_dir;
    std::string eval_ids;  // default: <checkpoint dir>/eval.ids
    std::uint64_t seed = 0;
    int jobs = 1;
    bool svg = true;
    bool include_eos_time = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
    EventLog log = load_eventlog(a.log_path);
    auto bundle = models::load_bundle(a.checkpoint);

    if (bundle.vocab.fingerprint() != log.vocabulary.fingerprint())
        throw IntegrityError("vocabulary mismatch: checkpoint " + hex64(bundle.vocab.fingerprint()) +
                             " vs log " + hex64(log.vocabulary.fingerprint()));

    fs::path ckpt_dir = fs::path(a.checkpoint).parent_path();
    fs::path eval_ids = a.eval_ids.empty() ? ckpt_dir / "eval.ids" : fs::path(a.eval_ids);
    fs::path train_ids = ckpt_dir / "train.ids";
    EventLog eval_log;
    if (fs::exists(train_ids) && fs::exists(eval_ids)) {
        eval_log = apply_split_manifest(log, train_ids, eval_ids).second;
    } else if (fs::exists(eval_ids)) {
        // only the eval side is needed; reuse the manifest loader with an empty train side
        fs::path empty = fs::temp_directory_path() / "suffixbench_empty.ids";
        write_file(empty, "");
        eval_log = apply_split_manifest(log, empty, eval_ids).second;
    } else {
        throw DataError("no eval.ids manifest found near checkpoint: " + eval_ids.string());
    }
    eval_log.time_scaler = bundle.scaler;

    inference::GenerationConfig gen;
    gen.max_len = bundle.cfg.max_len;
    gen.include_eos_time = a.include_eos_time;

    ConfigLines cfg;
    cfg.add("command", std::string("evaluate"));
    cfg.add("log", fs::path(a.log_path).filename().string());
    cfg.add("log_hash", hex64(log_fingerprint(log)));
    cfg.add("checkpoint", fs::path(a.checkpoint).filename().string());
    cfg.add("checkpoint_hash", hex64(hash_file(a.checkpoint)));
    cfg.add("arch", std::string(models::arch_name(bundle.cfg.arch)));
    cfg.add("seed", a.seed);
    cfg.add("max_len", gen.max_len);
    cfg.add("include_eos_time", std::string(a.include_eos_time ? "true" : "false"));
    cfg.add("dls_includes_eos", std::string("true"));
    for (const auto& [k, v] : bundle.meta) cfg.add("train." + k, v);

    std::vector<inference::PredictionRecord> predictions;
    auto report = evaluation::evaluate(bundle, eval_log, gen, a.seed,
                                       models::arch_name(bundle.cfg.arch),
                                       bundle.meta.count("dataset") ? bundle.meta.at("dataset")
                                                                    : dataset_tag_of(a.log_path),
                                       cfg.lines, &predictions, a.jobs);

    fs::create_directories(a.out_dir);
    fs::path out_dir(a.out_dir);
    inference::write_predictions(out_dir / "predictions.tsv", predictions, cfg.lines);
    evaluation::emit_report_csv(report, out_dir / "report.csv");
    if (a.svg) evaluation::emit_report_svg(report, out_dir / "dls.svg", out_dir / "mae.svg");
    write_file(out_dir / "run_config.txt", cfg.serialize());

    std::cout << "evaluated " << report.total_samples << " prefix instances: overall DLS "
              << fmt_double(report.overall_dls, 4) << ", overall MAE "
              << fmt_double(report.overall_mae_days, 4) << " days -> " << out_dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
    std::string runs_dir;
    std::string out_path;
};

int cmd_report(const ReportArgs& a) {
    std::vector<evaluation::CombinedEntry> entries;
    std::vector<fs::path> found;
    for (const auto& entry : fs::recursive_directory_iterator(a.runs_dir)) {
        if (entry.is_regular_file() && entry.path().filename() == "report.csv")
            found.push_back(entry.path());
    }
    std::sort(found.begin(), found.end());
    for (const auto& p : found)
        entries.push_back({evaluation::read_report_csv(p), p.string()});
    if (entries.empty()) throw DataError("no report.csv found under " + a.runs_dir);

    fs::path out = a.out_path.empty() ? fs::path(a.runs_dir) / "combined.csv" : fs::path(a.out_path);
    evaluation::emit_combined_csv(entries, out);
    std::cout << "combined " << entries.size() << " reports into " << out.string() << "\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"suffixbench: suffix and remaining-time prediction benchmark"};
    app.require_subcommand(1);
    app.set_config("--config");

    IngestArgs ingest;
    auto* ing = app.add_subcommand("ingest", "parse a raw event log into the canonical container");
    ing->add_option("--input", ingest.input, "input file")->required();
    ing->add_option("--format", ingest.format, "csv or xes")->check(CLI::IsMember({"csv", "xes"}));
    ing->add_option("--out", ingest.out_dir, "output directory")->required();
    ing->add_option("--case-col", ingest.columns.case_id, "CSV case id column");
    ing->add_option("--activity-col", ingest.columns.activity, "CSV activity column");
    ing->add_option("--timestamp-col", ingest.columns.timestamp, "CSV timestamp column");

    SynthArgs synth;
    auto* syn = app.add_subcommand("synth", "sample a synthetic event log as CSV");
    syn->add_option("--spec", synth.spec_path, "process spec file")->required();
    syn->add_option("--traces", synth.n_traces, "number of traces");
    syn->add_option("--seed", synth.seed, "rng seed")->envname("SUFFIXBENCH_SEED");
    syn->add_option("--out", synth.out_csv, "output CSV path")->required();

    TrainArgs train;
    auto* tr = app.add_subcommand("train", "train one architecture (or all) on a canonical log");
    tr->add_option("--log", train.log_path, "canonical log")->required();
    tr->add_option("--arch", train.arch, "lstm|ae|aegan|transformer|gpt|bert|wavenet|all");
    tr->add_option("--seed", train.seed, "rng seed")->envname("SUFFIXBENCH_SEED");
    tr->add_option("--out", train.out_dir, "parent directory for run dirs")->required();
    tr->add_option("--epochs", train.tcfg.max_epochs, "max training epochs");
    tr->add_option("--patience", train.tcfg.patience, "early-stopping patience");
    tr->add_option("--lr", train.tcfg.lr, "Adam learning rate");
    tr->add_option("--batch-size", train.tcfg.batch_size, "batch size");
    tr->add_option("--w-act", train.tcfg.w_act, "activity loss weight");
    tr->add_option("--w-time", train.tcfg.w_time, "time loss weight");
    tr->add_option("--clip-norm", train.tcfg.clip_norm, "global gradient-norm clip");
    tr->add_option("--layers", train.layers, "stacked layers");
    tr->add_option("--d-latent", train.d_latent, "latent width");
    tr->add_option("--heads", train.heads, "attention heads");
    tr->add_option("--conv-filter", train.conv_filter, "conv filter size");
    tr->add_option("--dropout", train.dropout, "dropout rate");
    tr->add_option("--train-frac", train.train_fraction, "train split fraction");
    tr->add_option("--split-from", train.split_from, "directory with existing train.ids/eval.ids");
    tr->add_option("--lambda", train.adv.lambda, "adversarial loss weight (aegan)");
    tr->add_option("--open-loop-p", train.adv.open_loop_p, "open-loop probability (aegan)");
    tr->add_option("--tau-start", train.adv.tau_start, "gumbel temperature start (aegan)");
    tr->add_option("--tau-end", train.adv.tau_end, "gumbel temperature end (aegan)");
    tr->add_option("--anneal-frac", train.adv.anneal_fraction, "tau anneal fraction (aegan)");
    tr->add_flag("--force", train.force, "overwrite an existing run directory");

    EvaluateArgs eval;
    auto* ev = app.add_subcommand("evaluate", "per-prefix evaluation of a trained checkpoint");
    ev->add_option("--log", eval.log_path, "canonical log")->required();
    ev->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
    ev->add_option("--out", eval.out_dir, "output directory")->required();
    ev->add_option("--eval-ids", eval.eval_ids, "eval split manifest (default: next to checkpoint)");
    ev->add_option("--seed", eval.seed, "rng seed (BERT decode order)")->envname("SUFFIXBENCH_SEED");
    ev->add_option("--jobs", eval.jobs, "parallel evaluation workers")->check(CLI::PositiveNumber);
    ev->add_flag("--svg,!--no-svg", eval.svg, "emit DLS/MAE charts");
    ev->add_flag("--include-eos-time", eval.include_eos_time, "count the [EOS] duration into remaining time");

    ReportArgs rep;
    auto* re = app.add_subcommand("report", "merge run reports into one comparison table");
    re->add_option("--runs", rep.runs_dir, "directory containing run outputs")->required();
    re->add_option("--out", rep.out_path, "combined CSV path");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 2;
    }

    // A lowered epoch budget implies a matching patience window unless set.
    if (tr->count("--patience") == 0)
        train.tcfg.patience = std::min(train.tcfg.patience, train.tcfg.max_epochs);

    try {
        if (*ing) return cmd_ingest(ingest);
        if (*syn) return cmd_synth(synth);
        if (*tr) return cmd_train(train);
        if (*ev) return cmd_evaluate(eval);
        if (*re) return cmd_report(rep);
        std::cerr << app.help();
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IntegrityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace suffixbench::cli
