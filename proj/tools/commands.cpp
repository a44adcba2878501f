#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "optshift/errors.hpp"
#include "optshift/hessian.hpp"
#include "optshift/net.hpp"
#include "optshift/sha1.hpp"
#include "optshift/shift.hpp"

namespace optshift::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void spill(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
}

fs::path resolve_out_dir(const CliOptions& opts, const std::string& command,
                         std::uint64_t seed) {
    if (!opts.out_dir.empty()) return fs::path(opts.out_dir);
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const auto us = std::chrono::duration_cast<std::chrono::microseconds>(now).count();
    return fs::path("runs") /
           (command + "-seed" + std::to_string(seed) + "-" + std::to_string(us));
}

// Manifest goes down before any compute; a second write at the end attaches
// the artifact hashes.
void write_manifest(const fs::path& dir, const std::string& command, const KvConfig& cfg,
                    std::uint64_t seed, const std::string& started_at,
                    const std::map<std::string, std::string>& artifacts) {
    json j;
    j["command"] = command;
    j["seed"] = seed;
    j["started_at"] = started_at;
    j["out_dir"] = dir.string();
    json conf = json::object();
    for (const auto& [k, v] : cfg.entries()) conf[k] = v;
    j["config"] = conf;
    j["config_hash"] = git_blob_hash(cfg.canonical_text());
    json arts = json::object();
    for (const auto& [name, hash] : artifacts) arts[name] = hash;
    j["artifacts"] = arts;
    spill(dir / "manifest.json", j.dump(2) + "\n");
}

std::map<std::string, std::string> hash_artifacts(const fs::path& dir,
                                                  const std::vector<std::string>& names) {
    std::map<std::string, std::string> out;
    for (const auto& name : names) {
        if (fs::exists(dir / name)) out[name] = git_blob_hash(slurp(dir / name));
    }
    return out;
}

LossKind parse_loss(const KvConfig& cfg) {
    const std::string raw = cfg.get_str("train.loss", "ce");
    if (raw == "ce" || raw == "cross-entropy") return LossKind::CrossEntropy;
    if (raw == "mse") return LossKind::MeanSquaredError;
    throw ConfigError("train.loss must be 'ce' or 'mse', got '" + raw + "'", -1, "train.loss");
}

}  // namespace

KvConfig resolve_config(const CliOptions& opts) {
    KvConfig cfg;
    if (!opts.config_path.empty()) cfg = KvConfig::parse_file(opts.config_path);
    for (const auto& kv : opts.overrides) cfg.set_kv(kv);
    if (opts.seed) cfg.set("seed", std::to_string(*opts.seed));
    if (opts.probes) cfg.set("hessian.probes", std::to_string(*opts.probes));
    return cfg;
}

std::pair<Dataset, Dataset> build_datasets(const KvConfig& cfg) {
    const std::string kind = cfg.get_str("data.kind", "blobs");
    if (kind == "blobs") {
        BlobSpec spec;
        spec.classes = static_cast<std::size_t>(cfg.get_int("blob.classes", 10));
        spec.dim = static_cast<std::size_t>(cfg.get_int("blob.dim", 64));
        spec.mean_scale = cfg.get_double("blob.delta", 4.0);
        spec.noise = cfg.get_double("blob.sigma", 1.0);
        spec.train_size = static_cast<std::size_t>(cfg.get_int("blob.train", 5000));
        spec.test_size = static_cast<std::size_t>(cfg.get_int("blob.test", 1000));
        spec.seed = cfg.get_u64("seed", 0);
        return generate_blobs(spec);
    }
    if (kind == "mnist") return load_mnist(cfg.get_str("data.dir"));
    if (kind == "cifar10") return load_cifar10(cfg.get_str("data.dir"));
    throw ConfigError("data.kind must be blobs, mnist or cifar10; got '" + kind + "'", -1,
                      "data.kind");
}

OsConfig build_os_config(const KvConfig& cfg) {
    OsConfig os;
    os.batch_size = static_cast<std::size_t>(cfg.get_int("sos.batch", 32));
    os.pivot_tol = cfg.get_double("sos.pivot_tol", 1e-10);
    os.max_logit_drift = cfg.get_double("sos.max_logit_drift", 1e-6);
    os.seed = cfg.get_u64("seed", 0);
    const std::string sampling = cfg.get_str("sos.sampling", "uniform");
    if (sampling == "uniform") {
        os.sampling = SamplingMode::Uniform;
    } else if (sampling == "stratified") {
        os.sampling = SamplingMode::ClassStratified;
    } else {
        throw ConfigError("sos.sampling must be uniform or stratified, got '" + sampling + "'",
                          -1, "sos.sampling");
    }
    return os;
}

TrainConfig build_train_config(const KvConfig& cfg) {
    TrainConfig tc;
    tc.epochs = static_cast<std::size_t>(cfg.get_int("train.epochs"));
    tc.batch_size = static_cast<std::size_t>(cfg.get_int("train.batch", 64));
    tc.lr = cfg.get_double("train.lr", 0.1);
    tc.momentum = cfg.get_double("train.momentum", 0.9);
    tc.nesterov = cfg.get_bool("train.nesterov", true);
    tc.weight_decay = cfg.get_double("train.weight_decay", 1e-4);
    tc.seed = cfg.get_u64("seed", 0);
    tc.loss = parse_loss(cfg);

    const std::string sched = cfg.get_str("train.schedule", "step");
    if (sched == "step") {
        tc.schedule = LrSchedule::Step;
        tc.step.milestones = cfg.get_double_list("train.milestones", {0.5, 0.75});
        tc.step.factor = cfg.get_double("train.step_factor", 0.1);
    } else if (sched == "cosine") {
        tc.schedule = LrSchedule::Cosine;
    } else {
        throw ConfigError("train.schedule must be step or cosine, got '" + sched + "'", -1,
                          "train.schedule");
    }

    if (cfg.has("train.mixup_alpha")) tc.mixup_alpha = cfg.get_double("train.mixup_alpha");
    if (cfg.has("train.sam_rho")) tc.sam_rho = cfg.get_double("train.sam_rho");

    if (cfg.get_bool("sos.enabled", false)) {
        SosSettings sos;
        sos.os = build_os_config(cfg);
        sos.frequency = static_cast<std::size_t>(cfg.get_int("sos.frequency", 1));
        sos.log_full_loss = cfg.get_bool("sos.log_full_loss", false);
        tc.sos = sos;
    }
    return tc;
}

std::vector<std::size_t> model_dims(const KvConfig& cfg, const Dataset& train_ds) {
    std::vector<std::size_t> dims;
    dims.push_back(train_ds.features());
    for (double h : cfg.get_double_list("model.hidden", {128})) {
        if (h < 1) throw ConfigError("model.hidden entries must be >= 1", -1, "model.hidden");
        dims.push_back(static_cast<std::size_t>(h));
    }
    dims.push_back(train_ds.class_count);
    return dims;
}

int cmd_train(const CliOptions& opts) {
    const KvConfig cfg = resolve_config(opts);
    const std::uint64_t seed = cfg.get_u64("seed", 0);
    const TrainConfig tc = build_train_config(cfg);  // validates keys up front

    const fs::path dir = resolve_out_dir(opts, "train", seed);
    fs::create_directories(dir / "checkpoints");
    const std::string started = timestamp_utc();
    write_manifest(dir, "train", cfg, seed, started, {});
    spill(dir / "config.txt", cfg.canonical_text());

    auto [train_ds, test_ds] = build_datasets(cfg);
    MlpModel model = MlpModel::random(model_dims(cfg, train_ds), seed);

    std::ofstream reports(dir / "os_reports.jsonl");
    const std::size_t hessian_every = static_cast<std::size_t>(cfg.get_int("hessian.every", 0));
    const std::size_t probes = static_cast<std::size_t>(cfg.get_int("hessian.probes", 100));
    const Matrix train_targets = one_hot(train_ds.labels, train_ds.class_count);

    struct TraceRow {
        std::size_t epoch;
        double estimate, stderr_, exact;
    };
    std::vector<TraceRow> trace_rows;

    TrainHooks hooks;
    hooks.on_os_report = [&](const OsReport& r) { append_os_report_jsonl(reports, r); };
    if (hessian_every > 0) {
        hooks.hessian_trace = [&](const MlpModel& m, std::size_t epoch) -> std::optional<double> {
            if (epoch % hessian_every != 0) return std::nullopt;
            const LinearOp op = make_hvp_op(m, train_ds.inputs, train_targets, tc.loss);
            const TraceEstimate est =
                hutchinson_trace(op, m.param_count(), probes, derive_seed(seed, 90, epoch));
            const double exact =
                exact_last_layer_trace(m, train_ds.inputs, train_targets, tc.loss);
            trace_rows.push_back({epoch, est.estimate, est.stderr_, exact});
            return est.estimate;
        };
    }
    const std::size_t ckpt_every = static_cast<std::size_t>(cfg.get_int("checkpoint.every", 0));
    hooks.checkpoint_every = ckpt_every;
    if (ckpt_every > 0) {
        hooks.on_checkpoint = [&](const MlpModel& m, std::size_t epoch) {
            std::ofstream out(dir / "checkpoints" / ("epoch_" + std::to_string(epoch) + ".ckpt"));
            save_checkpoint(out, m, seed, epoch);
        };
    }

    const std::vector<MetricsRow> rows = train(model, train_ds, test_ds, tc, hooks);

    {
        std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
        write_metrics_csv(metrics, rows);
    }
    {
        std::ofstream final_ckpt(dir / "checkpoints" / "final.ckpt");
        save_checkpoint(final_ckpt, model, seed, tc.epochs);
    }
    if (!trace_rows.empty()) {
        std::ofstream tr(dir / "hessian_trace.csv");
        tr << "epoch,trace_estimate,stderr,exact_last_layer_trace\n";
        for (const auto& r : trace_rows) {
            tr << r.epoch << ',' << format_real(r.estimate) << ',' << format_real(r.stderr_)
               << ',' << format_real(r.exact) << '\n';
        }
    }
    reports.close();

    write_manifest(dir, "train", cfg, seed, started,
                   hash_artifacts(dir, {"metrics.csv", "os_reports.jsonl", "config.txt",
                                        "hessian_trace.csv", "checkpoints/final.ckpt"}));
    if (!opts.quiet) {
        if (rows.empty()) {
            std::cout << "train: 0 epochs, outputs in " << dir.string() << "\n";
        } else {
            std::cout << "train: " << rows.size() << " epochs, final test_acc "
                      << format_real(rows.back().test_acc) << ", outputs in " << dir.string()
                      << "\n";
        }
    }
    return 0;
}

int cmd_os_apply(const CliOptions& opts) {
    const KvConfig cfg = resolve_config(opts);
    const std::uint64_t seed = cfg.get_u64("seed", 0);
    if (opts.checkpoint_path.empty()) throw ConfigError("os-apply: --checkpoint is required");

    const fs::path dir = resolve_out_dir(opts, "os-apply", seed);
    fs::create_directories(dir);
    const std::string started = timestamp_utc();
    write_manifest(dir, "os-apply", cfg, seed, started, {});
    spill(dir / "config.txt", cfg.canonical_text());

    std::ifstream ck_in(opts.checkpoint_path);
    if (!ck_in) throw IoError("cannot open checkpoint " + opts.checkpoint_path);
    Checkpoint ck = load_checkpoint(ck_in);

    auto [train_ds, test_ds] = build_datasets(cfg);
    const OsConfig os = build_os_config(cfg);
    const LossKind loss = parse_loss(cfg);

    const EvalResult train_before = evaluate(ck.model, train_ds, loss);
    const EvalResult test_before = evaluate(ck.model, test_ds, loss);

    const auto idx = sample_os_indices(train_ds, os, 0);
    OsReport report = apply_os(ck.model, gather_rows(train_ds.inputs, idx), os);

    const EvalResult train_after = evaluate(ck.model, train_ds, loss);
    const EvalResult test_after = evaluate(ck.model, test_ds, loss);
    report.loss_before = train_before.loss;
    report.loss_after = train_after.loss;

    {
        std::ofstream reports(dir / "os_reports.jsonl");
        append_os_report_jsonl(reports, report);
    }
    {
        std::ofstream out(dir / "os_shifted.ckpt");
        save_checkpoint(out, ck.model, ck.seed, ck.epoch);
    }
    {
        json j;
        j["train_loss_before"] = train_before.loss;
        j["train_loss_after"] = train_after.loss;
        j["train_acc_before"] = train_before.acc;
        j["train_acc_after"] = train_after.acc;
        j["test_loss_before"] = test_before.loss;
        j["test_loss_after"] = test_after.loss;
        j["test_acc_before"] = test_before.acc;
        j["test_acc_after"] = test_after.acc;
        j["norm_before"] = report.norm_before;
        j["norm_after"] = report.norm_after;
        j["rank"] = report.rank;
        spill(dir / "os_apply.json", j.dump(2) + "\n");
    }
    write_manifest(dir, "os-apply", cfg, seed, started,
                   hash_artifacts(dir, {"os_reports.jsonl", "os_shifted.ckpt", "os_apply.json",
                                        "config.txt"}));
    if (!opts.quiet) {
        std::cout << "os-apply: ||V|| " << format_real(report.norm_before) << " -> "
                  << format_real(report.norm_after) << ", train loss "
                  << format_real(train_before.loss) << " -> " << format_real(train_after.loss)
                  << ", test acc " << format_real(test_before.acc) << " -> "
                  << format_real(test_after.acc) << "\n";
    }
    return 0;
}

int cmd_hessian(const CliOptions& opts) {
    const KvConfig cfg = resolve_config(opts);
    const std::uint64_t seed = cfg.get_u64("seed", 0);
    if (opts.checkpoint_path.empty()) throw ConfigError("hessian: --checkpoint is required");

    const fs::path dir = resolve_out_dir(opts, "hessian", seed);
    fs::create_directories(dir);
    const std::string started = timestamp_utc();
    write_manifest(dir, "hessian", cfg, seed, started, {});

    std::ifstream ck_in(opts.checkpoint_path);
    if (!ck_in) throw IoError("cannot open checkpoint " + opts.checkpoint_path);
    const Checkpoint ck = load_checkpoint(ck_in);

    auto [train_ds, test_ds] = build_datasets(cfg);
    const LossKind loss = parse_loss(cfg);

    // Optional row cap keeps finite-difference probing affordable on big sets.
    const std::size_t cap = static_cast<std::size_t>(cfg.get_int("hessian.samples", 0));
    Matrix inputs = train_ds.inputs;
    Matrix targets = one_hot(train_ds.labels, train_ds.class_count);
    if (cap > 0 && cap < train_ds.size()) {
        std::vector<std::size_t> idx(cap);
        for (std::size_t i = 0; i < cap; ++i) idx[i] = i;
        inputs = gather_rows(train_ds.inputs, idx);
        targets = gather_rows(targets, idx);
    }

    HessianOptions hopts;
    hopts.probes = static_cast<std::size_t>(cfg.get_int("hessian.probes", 100));
    hopts.seed = seed;
    hopts.eps = cfg.get_double("hessian.eps", 0.0);
    hopts.power_iters = static_cast<std::size_t>(cfg.get_int("hessian.power_iters", 200));
    hopts.power_tol = cfg.get_double("hessian.power_tol", 1e-9);
    hopts.last_layer_only = cfg.get_str("hessian.scope", "all-parameters") == "last-layer";

    const HessianReport rep = hessian_report(ck.model, inputs, targets, loss, hopts);
    {
        std::ofstream out(dir / "hessian.json");
        write_hessian_json(out, rep);
    }
    write_manifest(dir, "hessian", cfg, seed, started, hash_artifacts(dir, {"hessian.json"}));
    if (!opts.quiet) {
        std::cout << "hessian: trace " << format_real(rep.hutchinson_trace) << " +/- "
                  << format_real(rep.hutchinson_stderr) << " (exact last-layer "
                  << format_real(rep.exact_last_layer_trace) << "), top "
                  << format_real(rep.top_eigenvalue) << "\n";
    }
    return 0;
}

int cmd_sweep(const CliOptions& opts) {
    const KvConfig cfg = resolve_config(opts);
    const std::uint64_t seed = cfg.get_u64("seed", 0);
    const std::vector<double> batches = cfg.get_double_list("sweep.batches", {});
    if (batches.empty()) throw ConfigError("missing required key 'sweep.batches'");
    const std::size_t runs = static_cast<std::size_t>(cfg.get_int("sweep.seeds", 3));

    const fs::path dir = resolve_out_dir(opts, "sweep", seed);
    fs::create_directories(dir);
    const std::string started = timestamp_utc();
    write_manifest(dir, "sweep", cfg, seed, started, {});
    spill(dir / "config.txt", cfg.canonical_text());

    auto [train_ds, test_ds] = build_datasets(cfg);
    const std::vector<std::size_t> dims = model_dims(cfg, train_ds);
    const std::size_t feature_dim = dims[dims.size() - 2];

    std::ostringstream table;
    table << "b2,runs,mean_test_acc,std_test_acc,identity_regime,max_vnorm_delta\n";
    for (double raw_b2 : batches) {
        const std::size_t b2 = static_cast<std::size_t>(raw_b2);
        std::vector<double> accs;
        double max_delta = 0.0;
        for (std::size_t r = 0; r < runs; ++r) {
            KvConfig run_cfg = cfg;
            run_cfg.set("sos.enabled", "true");
            run_cfg.set("sos.batch", std::to_string(b2));
            run_cfg.set("seed", std::to_string(seed + r));
            const TrainConfig tc = build_train_config(run_cfg);
            // The dataset is regenerated per seed so runs stay independent.
            auto [run_train, run_test] = build_datasets(run_cfg);
            MlpModel model = MlpModel::random(model_dims(run_cfg, run_train), seed + r);
            TrainHooks hooks;
            hooks.on_os_report = [&](const OsReport& rep) {
                max_delta = std::max(max_delta, std::fabs(rep.norm_after - rep.norm_before));
            };
            const auto rows = train(model, run_train, run_test, tc, hooks);
            accs.push_back(rows.empty() ? 0.0 : rows.back().test_acc);
        }
        double mean = 0.0;
        for (double a : accs) mean += a;
        mean /= static_cast<double>(accs.size());
        double var = 0.0;
        for (double a : accs) var += (a - mean) * (a - mean);
        const double stdev =
            accs.size() > 1 ? std::sqrt(var / static_cast<double>(accs.size() - 1)) : 0.0;
        table << b2 << ',' << runs << ',' << format_real(mean) << ',' << format_real(stdev)
              << ',' << (b2 >= feature_dim ? 1 : 0) << ',' << format_real(max_delta) << '\n';
    }
    spill(dir / "sweep.csv", table.str());
    write_manifest(dir, "sweep", cfg, seed, started,
                   hash_artifacts(dir, {"sweep.csv", "config.txt"}));
    if (!opts.quiet) std::cout << table.str();
    return 0;
}

int run_guarded(int (*cmd)(const CliOptions&), const CliOptions& opts) {
    try {
        return cmd(opts);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DivergenceError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const NotPositiveDefiniteError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const InconsistentSystemError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const ContractError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const StepSizeError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const RankError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 4;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 4;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace optshift::cli
