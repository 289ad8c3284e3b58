// Command-line front end: synthetic data generation, contrastive
// pre-training (cross-modal or self-supervised), and the two evaluation
// protocols. One command = one process; outputs land in a run directory as
// diffable artifacts (run.json, ckpt.etpc, log.jsonl, report.json,
// report.txt).
//
// Exit codes: 0 success, 1 runtime failure (divergence, I/O write errors),
// 2 usage or config errors (bad flags, missing inputs, corrupt checkpoints).

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "etp/checkpoint.hpp"
#include "etp/data.hpp"
#include "etp/errors.hpp"
#include "etp/evalkit.hpp"
#include "etp/nets.hpp"
#include "etp/runconfig.hpp"
#include "etp/trainer.hpp"

namespace fs = std::filesystem;
using namespace etp;

namespace {

// Failures while writing outputs: always exit 1, never 2.
struct WriteFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check_thread_env() {
    const char* raw = std::getenv("ETP_THREADS");
    if (!raw || !*raw) return;
    char* end = nullptr;
    const long n = std::strtol(raw, &end, 10);
    if (end == raw || *end != '\0' || n < 1)
        throw ConfigError(std::string("ETP_THREADS must be a positive integer, got '") + raw +
                          "'");
    if (n > 1)
        std::cerr << "note: ETP_THREADS=" << n
                  << " requested; batch assembly runs single-threaded (the only level "
                     "implemented), so results stay deterministic\n";
}

void require_file(const std::string& path) {
    if (!fs::exists(path)) throw ConfigError("no such file: " + path);
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec)
        throw WriteFailure("cannot create output directory '" + path + "': " + ec.message());
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw WriteFailure("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw WriteFailure("write to '" + path + "' failed");
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    try {
        ckpt.save(path);
    } catch (const Error& e) {
        throw WriteFailure(e.what());
    }
}

// Content hash identifying which checkpoint produced a report (FNV-1a 64).
std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("no such file: " + path);
    std::uint64_t h = 1469598103934665603ULL;
    char buf[1 << 15];
    while (in.read(buf, sizeof buf), in.gcount() > 0)
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

Vocabulary vocab_from_reports(const std::vector<EcgRecord>& records) {
    std::vector<std::string> reports;
    reports.reserve(records.size());
    for (const auto& r : records) reports.push_back(r.report);
    return Vocabulary::build(reports);
}

void apply_overrides(RunConfig& rc, const std::vector<std::string>& sets) {
    for (const std::string& kv : sets) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        rc.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
    int n = 0;
    std::string taxonomy = "ptbxl5";
    int length = 512;
    std::uint64_t seed = 0;
    std::string out;
};

void run_gen_data(const GenDataArgs& args) {
    const LabelTaxonomy taxonomy = LabelTaxonomy::by_name(args.taxonomy);
    if (args.n < taxonomy.size())
        throw ConfigError("--n must cover every class at least once (need >= " +
                          std::to_string(taxonomy.size()) + ", got " +
                          std::to_string(args.n) + ")");
    if (args.length < 256)
        throw ConfigError("--length must be >= 256, got " + std::to_string(args.length));
    auto records = generate_synthetic(args.n, taxonomy, args.length, args.seed);
    try {
        save_jsonl(records, args.out);
    } catch (const Error& e) {
        throw WriteFailure(e.what());
    }

    std::map<int, int> hist;
    for (const auto& r : records) hist[*r.label] += 1;
    for (int c = 0; c < taxonomy.size(); ++c)
        std::printf("%-8s %-28s %6d\n", taxonomy.classes[c].first.c_str(),
                    taxonomy.classes[c].second.c_str(), hist.count(c) ? hist.at(c) : 0);
    std::printf("wrote %zu records to %s\n", records.size(), args.out.c_str());
}

// ---------------------------------------------------------------------------
// pretrain / pretrain-ssl

struct PretrainArgs {
    std::string config;
    std::string data;
    std::string out;
    std::string resume;
    std::vector<std::string> sets;
};

void run_pretrain(const PretrainArgs& args, const std::string& objective, CLI::App* cmd) {
    RunConfig rc = RunConfig::defaults();
    if (!args.config.empty()) {
        require_file(args.config);
        rc = RunConfig::from_file(args.config);
    }
    rc.train.objective = objective;
    apply_overrides(rc, args.sets);

    require_file(args.data);
    const auto records = load_jsonl(args.data);

    // Resuming rebuilds the exact model (config + vocab) from the
    // checkpoint; a fresh run derives both from the corpus.
    std::optional<Checkpoint> resumed;
    if (!args.resume.empty()) {
        require_file(args.resume);
        resumed = Checkpoint::load(args.resume);
    }
    EtpModel model = resumed ? model_from_checkpoint(*resumed) : [&] {
        Vocabulary vocab = vocab_from_reports(records);
        const ModelConfig mc = rc.resolved_model(vocab.size());
        return EtpModel(mc, std::move(vocab));
    }();
    rc.model = model.config();

    Trainer trainer(model, rc.train, resumed ? resumed->completed_epochs : 0,
                    resumed ? static_cast<std::int64_t>(resumed->global_step) : 0);
    if (resumed) Trainer::restore(model, trainer.optimizer(), *resumed);

    ensure_dir(args.out);
    const std::string echo = rc.to_json();
    write_text(args.out + "/run.json", echo);
    const std::string ckpt_path = args.out + "/ckpt.etpc";

    std::ofstream log(args.out + "/log.jsonl", std::ios::binary);
    if (!log) throw WriteFailure("cannot open '" + args.out + "/log.jsonl' for writing");

    trainer.run(records, [&](const EpochLog& entry) {
        char line[160];
        std::snprintf(line, sizeof line,
                      "{\"epoch\":%d,\"mean_loss\":%.17g,\"wall_seconds\":%.3f,\"lr\":%g}\n",
                      entry.epoch, entry.mean_loss, entry.wall_seconds, entry.lr);
        log << line;
        log.flush();
        if (!log) throw WriteFailure("write to '" + args.out + "/log.jsonl' failed");
        if (rc.train.checkpoint_every > 0 && entry.epoch % rc.train.checkpoint_every == 0 &&
            entry.epoch < rc.train.epochs)
            save_checkpoint(trainer.make_checkpoint(echo), ckpt_path);
        std::printf("epoch %d/%d  loss %.4f  (%.1fs)\n", entry.epoch, rc.train.epochs,
                    entry.mean_loss, entry.wall_seconds);
    });

    save_checkpoint(trainer.make_checkpoint(echo), ckpt_path);
    std::printf("%s: %llu epochs done, checkpoint at %s\n", cmd->get_name().c_str(),
                static_cast<unsigned long long>(trainer.completed_epochs()),
                ckpt_path.c_str());
}

// ---------------------------------------------------------------------------
// zeroshot / linear-eval

// "random" builds a fresh seeded model instead of loading weights: the
// random-initialization baseline.
EtpModel model_for_eval(const std::string& checkpoint, const RunConfig& rc,
                        const std::vector<EcgRecord>& records, std::string& id_out,
                        std::string& echo_out) {
    if (checkpoint == "random") {
        Vocabulary vocab = vocab_from_reports(records);
        ModelConfig cfg = rc.resolved_model(vocab.size());
        RunConfig echo = rc;
        echo.model = cfg;
        id_out = "random";
        echo_out = echo.to_json();
        return EtpModel(cfg, std::move(vocab));
    }
    require_file(checkpoint);
    const Checkpoint ckpt = Checkpoint::load(checkpoint);
    id_out = file_hash(checkpoint);
    echo_out = ckpt.config_json;
    return model_from_checkpoint(ckpt);
}

struct ZeroShotArgs {
    std::string checkpoint;
    std::string data;
    std::string prompts = PromptSet::kDefaultTemplate;
    std::string taxonomy = "ptbxl5";
    std::string config;
    std::vector<std::string> sets;
    std::string out;
};

void run_zeroshot(const ZeroShotArgs& args) {
    RunConfig rc = RunConfig::defaults();
    if (!args.config.empty()) {
        require_file(args.config);
        rc = RunConfig::from_file(args.config);
    }
    apply_overrides(rc, args.sets);

    require_file(args.data);
    const auto records = load_jsonl(args.data);
    std::string ckpt_id, echo;
    EtpModel model = model_for_eval(args.checkpoint, rc, records, ckpt_id, echo);

    const PromptSet prompts =
        PromptSet::render(args.prompts, LabelTaxonomy::by_name(args.taxonomy));
    const ZeroShotResult result = zero_shot_classify(model, prompts, records);

    const std::string text = zero_shot_report_text(result);
    ensure_dir(args.out);
    write_text(args.out + "/report.json", zero_shot_report_json(result, echo, ckpt_id));
    write_text(args.out + "/report.txt", text);
    std::fputs(text.c_str(), stdout);
}

struct LinearEvalArgs {
    std::string checkpoint;
    std::string train;
    std::string test;
    std::string config;
    std::vector<std::string> sets;
    int epochs = 50;
    double lr = 1e-2;
    int batch_size = 32;
    std::uint64_t seed = 0;
    int num_classes = 0;  // 0 = infer from the labels
    std::string out;
};

void run_linear_eval(const LinearEvalArgs& args) {
    RunConfig rc = RunConfig::defaults();
    if (!args.config.empty()) {
        require_file(args.config);
        rc = RunConfig::from_file(args.config);
    }
    apply_overrides(rc, args.sets);

    require_file(args.train);
    require_file(args.test);
    const auto train_records = load_jsonl(args.train);
    const auto test_records = load_jsonl(args.test);

    int num_classes = args.num_classes;
    if (num_classes == 0) {
        for (const auto& r : train_records)
            if (r.label) num_classes = std::max(num_classes, *r.label + 1);
        for (const auto& r : test_records)
            if (r.label) num_classes = std::max(num_classes, *r.label + 1);
        if (num_classes == 0) throw ConfigError("linear-eval: no labels in either split");
    }

    std::string ckpt_id, echo;
    EtpModel model = model_for_eval(args.checkpoint, rc, train_records, ckpt_id, echo);
    const LinearProbeResult result =
        linear_probe(model, train_records, test_records, num_classes, args.epochs, args.lr,
                     args.batch_size, args.seed);

    const std::string text = probe_report_text(result);
    ensure_dir(args.out);
    write_text(args.out + "/report.json", probe_report_json(result, echo, ckpt_id));
    write_text(args.out + "/report.txt", text);
    std::fputs(text.c_str(), stdout);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ECG-text contrastive pre-training toolkit"};
    app.require_subcommand(1);

    GenDataArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic labeled corpus");
    gen_cmd->add_option("--n", gen.n, "Number of records")->required();
    gen_cmd->add_option("--taxonomy", gen.taxonomy, "Label taxonomy: ptbxl5 or cpsc9")
        ->capture_default_str();
    gen_cmd->add_option("--length", gen.length, "Samples per lead")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "Output JSONL path")->required();

    PretrainArgs pre;
    CLI::App* pre_cmd =
        app.add_subcommand("pretrain", "Cross-modal contrastive pre-training (ECG + text)");
    CLI::App* ssl_cmd =
        app.add_subcommand("pretrain-ssl", "Uni-modal self-supervised pre-training");
    for (CLI::App* cmd : {pre_cmd, ssl_cmd}) {
        cmd->add_option("--config", pre.config, "key = value config file");
        cmd->add_option("--data", pre.data, "Training corpus (JSONL)")->required();
        cmd->add_option("--out", pre.out, "Output directory")->required();
        cmd->add_option("--resume", pre.resume, "Checkpoint to continue from");
        cmd->add_option("--set", pre.sets, "Config override, key=value (repeatable)")
            ->type_name("KEY=VAL");
    }

    ZeroShotArgs zs;
    CLI::App* zs_cmd =
        app.add_subcommand("zeroshot", "Prompt-based zero-shot classification report");
    zs_cmd->add_option("--checkpoint", zs.checkpoint, "Checkpoint path, or 'random'")
        ->required();
    zs_cmd->add_option("--data", zs.data, "Labeled eval corpus (JSONL)")->required();
    zs_cmd->add_option("--prompts", zs.prompts, "Prompt template with a {disease} slot")
        ->capture_default_str();
    zs_cmd->add_option("--taxonomy", zs.taxonomy, "Label taxonomy: ptbxl5 or cpsc9")
        ->capture_default_str();
    zs_cmd->add_option("--config", zs.config, "Config file for 'random' baselines");
    zs_cmd->add_option("--set", zs.sets, "Config override, key=value (repeatable)")
        ->type_name("KEY=VAL");
    zs_cmd->add_option("--out", zs.out, "Output directory")->required();

    LinearEvalArgs le;
    CLI::App* le_cmd =
        app.add_subcommand("linear-eval", "Linear probe on frozen ECG features");
    le_cmd->add_option("--checkpoint", le.checkpoint, "Checkpoint path, or 'random'")
        ->required();
    le_cmd->add_option("--train", le.train, "Probe training corpus (JSONL)")->required();
    le_cmd->add_option("--test", le.test, "Probe test corpus (JSONL)")->required();
    le_cmd->add_option("--config", le.config, "Config file for 'random' baselines");
    le_cmd->add_option("--set", le.sets, "Config override, key=value (repeatable)")
        ->type_name("KEY=VAL");
    le_cmd->add_option("--epochs", le.epochs, "Probe epochs")->capture_default_str();
    le_cmd->add_option("--lr", le.lr, "Probe learning rate")->capture_default_str();
    le_cmd->add_option("--batch-size", le.batch_size, "Probe batch size")
        ->capture_default_str();
    le_cmd->add_option("--seed", le.seed, "Probe init/shuffle seed")->capture_default_str();
    le_cmd->add_option("--num-classes", le.num_classes,
                       "Class count (0 = infer from labels)")
        ->capture_default_str();
    le_cmd->add_option("--out", le.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // --help is a success; flag errors are usage errors
    }

    try {
        check_thread_env();
        if (gen_cmd->parsed()) run_gen_data(gen);
        if (pre_cmd->parsed()) run_pretrain(pre, "etp", pre_cmd);
        if (ssl_cmd->parsed()) run_pretrain(pre, "ssl", ssl_cmd);
        if (zs_cmd->parsed()) run_zeroshot(zs);
        if (le_cmd->parsed()) run_linear_eval(le);
        return 0;
    } catch (const WriteFailure& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const LookupError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
