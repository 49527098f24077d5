// Operator surface: generate synthetic paired embeddings, train the fusion
// encoder, run the evaluation protocols, verify gradients, inspect and
// convert files.
//
// Exit codes: 0 success, 2 usage/input error, 3 runtime/data error.
// gradcheck exits 1 when the error exceeds the threshold.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lightcrl/jsonl.hpp"
#include "lightcrl/lightcrl.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw lightcrl::IoError("cannot write " + path);
    out << j.dump(2) << "\n";
}

void require_file(const std::string& path) {
    if (!fs::exists(path)) throw lightcrl::ContractError("file does not exist: " + path);
}

std::vector<std::size_t> parse_k_list(const std::string& csv) {
    std::vector<std::size_t> ks;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const long v = std::stol(item);
        if (v <= 0) throw lightcrl::ContractError("k values must be positive, got " + item);
        ks.push_back(static_cast<std::size_t>(v));
    }
    if (ks.empty()) throw lightcrl::ContractError("empty k list");
    return ks;
}

json report_to_json(const lightcrl::EvalReport& r) {
    json j{{"metric", r.metric}, {"k", r.k}, {"direction", r.direction}, {"value", r.value}, {"support", r.support}};
    if (!r.per_class.empty()) j["per_class"] = r.per_class;
    return j;
}

void emit_reports(const std::vector<lightcrl::EvalReport>& reports, const std::string& out_path) {
    std::ofstream out;
    if (!out_path.empty()) {
        out.open(out_path, std::ios::trunc);
        if (!out) throw lightcrl::IoError("cannot write " + out_path);
    }
    for (const auto& r : reports) {
        const std::string line = report_to_json(r).dump();
        std::cout << line << "\n";
        if (out) out << line << "\n";
    }
}

lightcrl::SplitTag split_from_name(const std::string& s) {
    if (s == "train") return lightcrl::SplitTag::train;
    if (s == "val") return lightcrl::SplitTag::val;
    if (s == "test") return lightcrl::SplitTag::test;
    throw lightcrl::ContractError("bad split tag '" + s + "'");
}

// ---------------------------------------------------------------------------
// gensynth
// ---------------------------------------------------------------------------

struct GensynthOpts {
    std::size_t n = 512, n_test = 0, d_latent = 8, d1 = 32, d2 = 48, classes = 10;
    double sigma = 0.1;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::string out_prefix = "synth";
    std::string protos_out;
};

int run_gensynth(const GensynthOpts& o) {
    if (o.n == 0 || o.d_latent == 0 || o.d1 == 0 || o.d2 == 0 || o.classes == 0)
        throw lightcrl::ContractError("gensynth: --n, dims and --classes must be positive");
    if (o.n_test >= o.n) throw lightcrl::ContractError("gensynth: --n-test must be smaller than --n");
    if (o.d_latent > std::min(o.d1, o.d2))
        std::cerr << "warning: d_latent exceeds min(d1, d2); latent recovery will be lossy\n";

    fs::create_directories(o.out_dir);
    const std::string base = (fs::path(o.out_dir) / o.out_prefix).string();

    lightcrl::SyntheticSpec spec{o.n, o.d_latent, o.d1, o.d2, o.sigma, o.classes, o.seed};
    auto synth = lightcrl::generate_synthetic<double>(spec);

    json outputs;
    if (o.n_test == 0) {
        synth.set.split_tag = lightcrl::SplitTag::train;
        lightcrl::save_embeddings(synth.set, base + ".lce");
        outputs["data"] = base + ".lce";
    } else {
        auto [train, test] = lightcrl::split_paired_set(synth.set, o.n - o.n_test);
        lightcrl::save_embeddings(train, base + ".lce");
        lightcrl::save_embeddings(test, base + ".test.lce");
        outputs["data"] = base + ".lce";
        outputs["test_data"] = base + ".test.lce";
    }
    if (!o.protos_out.empty()) {
        auto protos = lightcrl::prototypes_from_synthetic(synth, spec);
        lightcrl::PairedEmbeddingSet<double> pset;
        pset.n = o.classes;
        pset.d1 = o.d_latent;
        pset.d2 = o.d2;
        pset.split_tag = lightcrl::SplitTag::test;
        pset.m1 = lightcrl::Tensor<double>::from_data(
            {o.classes, o.d_latent},
            std::vector<double>(synth.class_means.begin(), synth.class_means.end()));
        pset.m2 = protos.proto2;
        std::vector<std::uint32_t> ids(o.classes);
        for (std::size_t c = 0; c < o.classes; ++c) ids[c] = static_cast<std::uint32_t>(c);
        pset.labels = std::move(ids);
        lightcrl::save_embeddings(pset, o.protos_out);
        outputs["protos"] = o.protos_out;
    }

    json manifest{{"command", "gensynth"},
                  {"build", lightcrl::kBuildId},
                  {"started", utc_now()},
                  {"seed", o.seed},
                  {"config",
                   {{"n", o.n},
                    {"n_test", o.n_test},
                    {"d_latent", o.d_latent},
                    {"d1", o.d1},
                    {"d2", o.d2},
                    {"sigma", o.sigma},
                    {"classes", o.classes}}},
                  {"outputs", outputs}};
    write_json_file(base + ".manifest.json", manifest);
    std::cout << "wrote " << outputs.dump() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
    std::string data, val_data, resume;
    double val_fraction = 0.1;
    std::string fusion = "add";
    std::size_t batch_k = 64, max_epochs = 500, patience = 20;
    double lr = 1e-3, grad_clip = 0.0;
    std::size_t d_model = 64, d_ctx = 16, d_out = 64;
    std::uint64_t seed = 0;
    std::string out_dir = "run";
    int precision = 32;
    // which flags were set explicitly (resume honors explicit overrides)
    bool set_batch_k = false, set_max_epochs = false, set_patience = false, set_lr = false,
         set_grad_clip = false, set_seed = false;
};

template <class S>
int run_train(const TrainOpts& o) {
    require_file(o.data);
    auto full = lightcrl::load_embeddings<S>(o.data);

    lightcrl::PairedEmbeddingSet<S> train_set, val_set;
    if (!o.val_data.empty()) {
        require_file(o.val_data);
        train_set = full;
        val_set = lightcrl::load_embeddings<S>(o.val_data);
    } else {
        if (!(o.val_fraction > 0.0 && o.val_fraction < 1.0))
            throw lightcrl::ContractError("--val-fraction must be in (0, 1)");
        const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                        static_cast<double>(full.n) * o.val_fraction));
        if (n_val >= full.n) throw lightcrl::ContractError("validation fraction leaves no training rows");
        // Deterministic split: the last rows become validation.
        auto [tr, va] = lightcrl::split_paired_set(full, full.n - n_val,
                                                   lightcrl::SplitTag::train, lightcrl::SplitTag::val);
        train_set = std::move(tr);
        val_set = std::move(va);
    }

    lightcrl::DfeParameters<S> params;
    lightcrl::TrainConfig<S> cfg;
    lightcrl::FitState<S> state;

    if (!o.resume.empty()) {
        require_file(o.resume);
        if (o.set_seed) throw lightcrl::ContractError("--seed cannot change on --resume (the batch schedule depends on it)");
        auto run = lightcrl::restore_run<S>(lightcrl::load_checkpoint(o.resume));
        params = std::move(run.params);
        cfg = run.config;
        state = std::move(run.state);
        if (o.set_batch_k) cfg.batch_k = o.batch_k;
        if (o.set_max_epochs) cfg.max_epochs = o.max_epochs;
        if (o.set_patience) cfg.patience = o.patience;
        if (o.set_lr) cfg.lr = static_cast<S>(o.lr);
        if (o.set_grad_clip) cfg.grad_clip = static_cast<S>(o.grad_clip);
    } else {
        cfg.batch_k = o.batch_k;
        cfg.max_epochs = o.max_epochs;
        cfg.patience = o.patience;
        cfg.lr = static_cast<S>(o.lr);
        cfg.grad_clip = static_cast<S>(o.grad_clip);
        cfg.seed = o.seed;
        cfg.val_fraction = o.val_fraction;
        params = lightcrl::init_parameters<S>(full.d1, full.d2, o.d_ctx, o.d_model, o.d_out,
                                              lightcrl::fusion_kind_from_name(o.fusion), o.seed);
    }
    lightcrl::validate_config(cfg, train_set.n);

    fs::create_directories(o.out_dir);
    const std::string ckpt_path = (fs::path(o.out_dir) / "checkpoint.lck").string();
    const std::string history_path = (fs::path(o.out_dir) / "history.jsonl").string();
    const std::string manifest_path = (fs::path(o.out_dir) / "run_manifest.json").string();

    // The manifest lands on disk before the first epoch.
    json manifest{{"command", "train"},
                  {"build", lightcrl::kBuildId},
                  {"started", utc_now()},
                  {"seed", cfg.seed},
                  {"precision", static_cast<int>(sizeof(S) * 8)},
                  {"config",
                   {{"data", o.data},
                    {"val_data", o.val_data},
                    {"fusion", lightcrl::fusion_kind_name(params.fusion.kind)},
                    {"batch_k", cfg.batch_k},
                    {"max_epochs", cfg.max_epochs},
                    {"patience", cfg.patience},
                    {"lr", static_cast<double>(cfg.lr)},
                    {"grad_clip", static_cast<double>(cfg.grad_clip)},
                    {"d_model", params.d_model},
                    {"d_ctx", params.d_ctx},
                    {"d_out", params.d_out},
                    {"resume", o.resume}}},
                  {"outputs", {{"checkpoint", ckpt_path}, {"history", history_path}}}};
    write_json_file(manifest_path, manifest);

    const std::size_t first_epoch = state.initialized() ? state.next_epoch : 0;
    auto result = lightcrl::fit(params, train_set, val_set, cfg, &state);

    std::ofstream hist(history_path, std::ios::trunc);
    if (!hist) throw lightcrl::IoError("cannot write " + history_path);
    for (std::size_t i = 0; i < result.history.size(); ++i) {
        json line{{"epoch", first_epoch + i + 1},
                  {"train_loss", static_cast<double>(result.history[i].train_loss)},
                  {"val_loss", static_cast<double>(result.history[i].val_loss)}};
        hist << line.dump() << "\n";
    }
    hist.close();

    lightcrl::save_checkpoint(lightcrl::make_checkpoint(params, cfg, state), ckpt_path);
    std::cout << "trained " << result.history.size() << " epochs, best val loss " << state.best_val
              << ", checkpoint " << ckpt_path << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOpts {
    std::string checkpoint, data, train_data, protos, protocol = "recall";
    std::string topk = "1,2,3,4,5", ks = "1,5,10";
    std::size_t epochs = 100, eval_every = 20;
    double lr = 0.05;
    std::string out;
};

template <class S>
int run_eval(const EvalOpts& o) {
    require_file(o.checkpoint);
    require_file(o.data);
    auto run = lightcrl::restore_run<S>(lightcrl::load_checkpoint(o.checkpoint));
    // Evaluate the best-validation snapshot.
    lightcrl::DfeParameters<S>& model = run.state.best;
    auto data = lightcrl::load_embeddings<S>(o.data);

    std::vector<lightcrl::EvalReport> reports;
    if (o.protocol == "recall") {
        auto ks = parse_k_list(o.ks);
        reports = lightcrl::retrieval_recall_at_k(model, data, ks);
    } else if (o.protocol == "zeroshot") {
        if (o.protos.empty()) throw lightcrl::ContractError("zeroshot needs --protos");
        require_file(o.protos);
        if (!data.labels) throw lightcrl::ContractError("zeroshot needs labeled --data");
        auto pfile = lightcrl::load_embeddings<S>(o.protos);
        lightcrl::ClassPrototypeSet<S> protos;
        protos.proto2 = pfile.m2;
        for (std::size_t c = 0; c < pfile.n; ++c) protos.names.push_back("class" + std::to_string(c));
        auto ks = parse_k_list(o.topk);
        auto zs = lightcrl::zero_shot_classify(model, data.m1, *data.labels, protos, ks);
        reports = std::move(zs.reports);
    } else if (o.protocol == "probe" || o.protocol == "finetune") {
        if (o.train_data.empty()) throw lightcrl::ContractError(o.protocol + " needs --train-data");
        require_file(o.train_data);
        auto train_set = lightcrl::load_embeddings<S>(o.train_data);
        if (!train_set.labels || !data.labels)
            throw lightcrl::ContractError(o.protocol + " needs labeled --train-data and --data");
        const std::size_t classes = std::max(train_set.num_classes(), data.num_classes());
        std::vector<std::pair<std::size_t, double>> curve;
        if (o.protocol == "probe") {
            auto probe = lightcrl::train_linear_probe(model, train_set, data, o.epochs,
                                                      static_cast<S>(o.lr), o.eval_every);
            curve = std::move(probe.test_accuracy);
        } else {
            auto ft = lightcrl::finetune(model, train_set, &data, classes, o.epochs,
                                         static_cast<S>(o.lr), o.eval_every, /*freeze_dfe=*/false);
            curve = std::move(ft.test_accuracy);
        }
        for (const auto& [epoch, acc] : curve)
            reports.push_back({o.protocol + "_accuracy", epoch, "-", acc, data.n, {}});
    } else {
        throw lightcrl::ContractError("unknown protocol '" + o.protocol + "'");
    }

    emit_reports(reports, o.out);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckOpts {
    std::size_t d1 = 5, d2 = 7, d_ctx = 4, d_model = 8, d_out = 8, batch_k = 3;
    std::string fusion = "all";
    double h = 1e-5, threshold = 1e-6;
    std::uint64_t seed = 7;
};

template <class S>
int run_gradcheck(const GradcheckOpts& o) {
    if (o.d_model > 16) throw lightcrl::ContractError("gradcheck enforces d_model <= 16");
    std::vector<lightcrl::FusionKind> kinds;
    if (o.fusion == "all")
        kinds = {lightcrl::FusionKind::add, lightcrl::FusionKind::multiply, lightcrl::FusionKind::concat,
                 lightcrl::FusionKind::attention};
    else
        kinds = {lightcrl::fusion_kind_from_name(o.fusion)};

    lightcrl::Xoshiro256ss rng(o.seed);
    auto random_batch = [&](std::size_t n, std::size_t d) {
        std::vector<S> v(n * d);
        for (auto& x : v) x = static_cast<S>(2.0 * rng.next_double() - 1.0);
        return lightcrl::Tensor<S>::from_data({n, d}, std::move(v));
    };
    auto x1 = random_batch(o.batch_k, o.d1);
    auto x2 = random_batch(o.batch_k, o.d2);

    double worst = 0.0;
    for (auto kind : kinds) {
        auto params = lightcrl::init_parameters<S>(o.d1, o.d2, o.d_ctx, o.d_model, o.d_out, kind, o.seed);
        auto named = params.named_parameters();
        // The targets are stop-gradients: freeze them at the base point so the
        // finite differences probe the function the backward pass implements.
        lightcrl::Tensor<S> t12, t21;
        {
            auto h1 = lightcrl::encode_modality(params, x1, 1);
            auto h2 = lightcrl::encode_modality(params, x2, 2);
            auto rep = lightcrl::total_loss(h1, h2, lightcrl::exp(params.log_tau));
            t12 = rep.targets12;
            t21 = rep.targets21;
        }
        auto loss_fn = [&]() {
            auto h1 = lightcrl::encode_modality(params, x1, 1);
            auto h2 = lightcrl::encode_modality(params, x2, 2);
            return lightcrl::total_loss_with_targets(h1, h2, lightcrl::exp(params.log_tau), t12, t21).total;
        };
        lightcrl::FdOptions opts;
        opts.h = o.h;
        auto report = lightcrl::finite_difference_check<S>(loss_fn, named, opts);
        std::cout << "fusion=" << lightcrl::fusion_kind_name(kind) << " max_rel_error=" << report.max_rel_error
                  << " worst=" << report.worst_tensor << "[" << report.worst_index << "]"
                  << " coords=" << report.coords_checked << "\n";
        worst = std::max(worst, report.max_rel_error);
    }
    std::cout << "max_rel_error=" << worst << " threshold=" << o.threshold
              << (worst <= o.threshold ? " PASS" : " FAIL") << "\n";
    return worst <= o.threshold ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

int run_inspect(const std::string& path) {
    require_file(path);
    auto ckpt = lightcrl::load_checkpoint(path);
    std::size_t total_params = 0;
    double log_tau = 0.0;
    bool has_tau = false;
    std::cout << "checkpoint " << path << " (version " << ckpt.version << ", " << ckpt.sections.size()
              << " sections)\n";
    for (const auto& sec : ckpt.sections) {
        std::cout << "  " << sec.name << "  " << lightcrl::shape_str(sec.shape) << "  f"
                  << (sec.elem_width * 8) << "\n";
        if (sec.name.rfind("param/", 0) == 0) {
            total_params += sec.numel();
            if (sec.name == "param/log_tau") {
                log_tau = sec.as_f64()[0];
                has_tau = true;
            }
        }
    }
    std::cout << "param_count " << total_params << "\n";
    if (has_tau) std::cout << "tau " << std::exp(log_tau) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// convert
// ---------------------------------------------------------------------------

int run_convert(const std::string& in, const std::string& out, const std::string& split) {
    require_file(in);
    lightcrl::convert_jsonl_to_lce<double>(in, out, split_from_name(split));
    std::cout << "wrote " << out << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"LightCRL: cross-modal representation learning on frozen embeddings"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value config file; command-line flags win");

    int precision = 32;

    GensynthOpts gen;
    auto* cmd_gen = app.add_subcommand("gensynth", "generate seeded synthetic paired embeddings");
    cmd_gen->add_option("--n", gen.n, "total pair count");
    cmd_gen->add_option("--n-test", gen.n_test, "rows split off into a test file");
    cmd_gen->add_option("--d-latent", gen.d_latent, "latent width");
    cmd_gen->add_option("--d1", gen.d1, "modality-1 width");
    cmd_gen->add_option("--d2", gen.d2, "modality-2 width");
    cmd_gen->add_option("--sigma", gen.sigma, "observation noise");
    cmd_gen->add_option("--classes", gen.classes, "class count");
    cmd_gen->add_option("--seed", gen.seed, "generator seed");
    cmd_gen->add_option("--out-dir", gen.out_dir, "output directory");
    cmd_gen->add_option("--out", gen.out_prefix, "output file prefix");
    cmd_gen->add_option("--protos-out", gen.protos_out, "also write class prototypes to this LCE1 file");

    TrainOpts tr;
    auto* cmd_train = app.add_subcommand("train", "train the fusion encoder");
    auto* f_data = cmd_train->add_option("--data", tr.data, "training LCE1 file");
    cmd_train->add_option("--val-data", tr.val_data, "validation LCE1 file");
    cmd_train->add_option("--val-fraction", tr.val_fraction, "tail fraction held out when no --val-data");
    cmd_train->add_option("--fusion", tr.fusion, "add|multiply|concat|attention");
    auto* f_bk = cmd_train->add_option("--batch-k", tr.batch_k, "minibatch size K");
    auto* f_me = cmd_train->add_option("--max-epochs", tr.max_epochs, "epoch cap");
    auto* f_pa = cmd_train->add_option("--patience", tr.patience, "early-stopping patience");
    auto* f_lr = cmd_train->add_option("--lr", tr.lr, "learning rate");
    auto* f_gc = cmd_train->add_option("--grad-clip", tr.grad_clip, "max gradient norm, 0 = off");
    cmd_train->add_option("--d-model", tr.d_model, "block width (multiple of 4)");
    cmd_train->add_option("--d-ctx", tr.d_ctx, "context identifier width");
    cmd_train->add_option("--d-out", tr.d_out, "output embedding width");
    auto* f_seed = cmd_train->add_option("--seed", tr.seed, "run seed");
    cmd_train->add_option("--out-dir", tr.out_dir, "output directory");
    cmd_train->add_option("--resume", tr.resume, "continue from a checkpoint");
    cmd_train->add_option("--precision", precision, "32 or 64")->check(CLI::IsMember({32, 64}));
    f_data->required();

    EvalOpts ev;
    auto* cmd_eval = app.add_subcommand("eval", "run an evaluation protocol");
    cmd_eval->add_option("--checkpoint", ev.checkpoint, "trained checkpoint")->required();
    cmd_eval->add_option("--data", ev.data, "evaluation LCE1 file")->required();
    cmd_eval->add_option("--protocol", ev.protocol, "zeroshot|recall|probe|finetune");
    cmd_eval->add_option("--protos", ev.protos, "class prototype LCE1 file (zeroshot)");
    cmd_eval->add_option("--train-data", ev.train_data, "labeled training LCE1 file (probe/finetune)");
    cmd_eval->add_option("--topk", ev.topk, "comma-separated k list for zeroshot");
    cmd_eval->add_option("--ks", ev.ks, "comma-separated k list for recall");
    cmd_eval->add_option("--epochs", ev.epochs, "probe/finetune epochs");
    cmd_eval->add_option("--eval-every", ev.eval_every, "probe/finetune evaluation cadence");
    cmd_eval->add_option("--lr", ev.lr, "probe/finetune learning rate");
    cmd_eval->add_option("--out", ev.out, "also write report lines to this file");
    cmd_eval->add_option("--precision", precision, "32 or 64")->check(CLI::IsMember({32, 64}));

    GradcheckOpts gc;
    auto* cmd_gc = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
    cmd_gc->add_option("--d1", gc.d1, "modality-1 width");
    cmd_gc->add_option("--d2", gc.d2, "modality-2 width");
    cmd_gc->add_option("--d-ctx", gc.d_ctx, "context width");
    cmd_gc->add_option("--d-model", gc.d_model, "block width, at most 16 here");
    cmd_gc->add_option("--d-out", gc.d_out, "output width");
    cmd_gc->add_option("--k", gc.batch_k, "batch size");
    cmd_gc->add_option("--fusion", gc.fusion, "add|multiply|concat|attention|all");
    cmd_gc->add_option("--h", gc.h, "finite-difference step");
    cmd_gc->add_option("--threshold", gc.threshold, "max relative error for exit 0");
    cmd_gc->add_option("--seed", gc.seed, "seed");
    int gc_precision = 64;
    cmd_gc->add_option("--precision", gc_precision, "32 or 64")->check(CLI::IsMember({32, 64}));

    std::string inspect_path;
    auto* cmd_inspect = app.add_subcommand("inspect", "summarize a checkpoint");
    cmd_inspect->add_option("--checkpoint", inspect_path, "checkpoint file")->required();

    std::string conv_in, conv_out, conv_split = "train";
    auto* cmd_conv = app.add_subcommand("convert", "convert JSONL pairs to the LCE1 format");
    cmd_conv->add_option("--in", conv_in, "input .jsonl file")->required();
    cmd_conv->add_option("--out", conv_out, "output .lce file")->required();
    cmd_conv->add_option("--split", conv_split, "train|val|test");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (cmd_gen->parsed()) return run_gensynth(gen);
        if (cmd_train->parsed()) {
            tr.set_batch_k = f_bk->count() > 0;
            tr.set_max_epochs = f_me->count() > 0;
            tr.set_patience = f_pa->count() > 0;
            tr.set_lr = f_lr->count() > 0;
            tr.set_grad_clip = f_gc->count() > 0;
            tr.set_seed = f_seed->count() > 0;
            return precision == 64 ? run_train<double>(tr) : run_train<float>(tr);
        }
        if (cmd_eval->parsed()) return precision == 64 ? run_eval<double>(ev) : run_eval<float>(ev);
        if (cmd_gc->parsed()) return gc_precision == 64 ? run_gradcheck<double>(gc) : run_gradcheck<float>(gc);
        if (cmd_inspect->parsed()) return run_inspect(inspect_path);
        if (cmd_conv->parsed()) return run_convert(conv_in, conv_out, conv_split);
    } catch (const lightcrl::ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const lightcrl::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
