// suslab: desk-scale lab for silent-until-sparse backdoors against 2:4
// semi-structured sparsity. Subcommands: attack, sparsify, eval, finetune,
// report. Exit codes: 0 success, 1 usage/config error, 2 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "suslab/checkpoint.hpp"
#include "suslab/config.hpp"
#include "suslab/eval.hpp"
#include "suslab/lab.hpp"
#include "suslab/packed.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::string variant;
    std::optional<std::uint64_t> seed;
};

suslab::RunConfig load_config(const CommonOpts& opts) {
    suslab::RunConfig cfg = suslab::parse_run_config_file(opts.config_path);
    if (!opts.variant.empty()) {
        if (opts.variant == "sus-f")
            cfg.variant = suslab::Variant::sus_f;
        else if (opts.variant == "sus-r")
            cfg.variant = suslab::Variant::sus_r;
        else
            throw suslab::ConfigError("--variant: expected sus-f or sus-r");
        // Re-derive the variant's default tau unless the file pinned one.
        cfg.tau = cfg.variant == suslab::Variant::sus_f ? suslab::TauPolicy::fixed(0.0)
                                                        : suslab::TauPolicy::percentile(75.0);
    }
    if (opts.seed) suslab::override_seeds(cfg, *opts.seed);
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
    return cfg;
}

json metrics_json(const std::string& label, const suslab::MetricsReport& m) {
    return json{{"label", label},
                {"acc", m.acc},
                {"asr", m.asr},
                {"mag_r", m.mag_r},
                {"mag_r_layers", m.mag_r_layers}};
}

void emit_metrics(const std::string& label, const suslab::MetricsReport& m, bool as_json,
                  const std::string& record_path) {
    suslab::ReportRow row{label, m};
    if (as_json)
        std::cout << metrics_json(label, m).dump(2) << "\n";
    else
        std::cout << suslab::report_table({&row, 1});
    if (!record_path.empty()) {
        std::ofstream os(record_path, std::ios::app);
        if (!os) throw std::runtime_error("cannot open for write: " + record_path);
        os << suslab::report_record(row) << "\n";
    }
}

int cmd_attack(const CommonOpts& opts) {
    suslab::RunConfig cfg = load_config(opts);
    suslab::AttackArtifacts art = suslab::run_attack_pipeline(cfg);
    suslab::write_attack_artifacts(cfg, art, cfg.out_dir);
    std::cout << "wrote " << cfg.out_dir << "/{initial,backdoored,released}.ckpt\n"
              << suslab::attack_manifest(cfg, art);
    return 0;
}

int cmd_sparsify(const std::string& ckpt_path, bool permute, bool fc_only,
                 const std::string& out_dir) {
    suslab::Checkpoint ck = suslab::load_checkpoint_file(ckpt_path);
    suslab::VictimPipeline pipe;
    pipe.permute = permute;
    pipe.library = fc_only ? suslab::VictimPipeline::Library::fc_only
                           : suslab::VictimPipeline::Library::full_layers;
    suslab::SparsifyResult res = suslab::sparsify(ck.net, pipe);

    fs::path dir = out_dir.empty() ? fs::path(ckpt_path).parent_path() : fs::path(out_dir);
    if (!dir.empty()) fs::create_directories(dir);

    suslab::Checkpoint out;
    out.phase = suslab::Phase::sparse;
    out.config_hash = ck.config_hash;
    out.net = res.net;
    out.masks = res.masks;
    if (!res.input_perm.is_identity()) out.input_perm = res.input_perm;
    fs::path sparse_path = dir / "sparse.ckpt";
    suslab::save_checkpoint_file(out, sparse_path.string());
    std::cout << "wrote " << sparse_path.string() << "\n";

    for (int k = 0; k < res.net.layer_count(); ++k) {
        if (permute)
            std::cout << "layer " << k << " permutation: "
                      << (res.perms[k].is_identity() ? "identity" : "non-identity") << "\n";
        if (!res.masks[k]) continue;
        suslab::Packed24 pk = suslab::pack(res.net.layers[k].weights, *res.masks[k]);
        char name[32];
        std::snprintf(name, sizeof(name), "layer%02d.p24", k);
        std::ofstream os(dir / name, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open for write: " + (dir / name).string());
        suslab::save_packed(pk, os);
    }
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt_path, const std::string& dataset_path,
             const std::string& label, bool as_json, const std::string& record_path) {
    suslab::RunConfig cfg = load_config(opts);
    suslab::Checkpoint ck = suslab::load_checkpoint_file(ckpt_path);
    suslab::Dataset test;
    if (!dataset_path.empty()) {
        std::ifstream is(dataset_path, std::ios::binary);
        if (!is) throw std::runtime_error("cannot open dataset: " + dataset_path);
        test = suslab::load_dataset(is);
    } else {
        test = suslab::build_test_dataset(cfg);
    }
    suslab::TriggerSpec trigger = suslab::build_trigger(cfg, test.h, test.w, test.c);
    suslab::EvalOptions eopts;
    if (ck.input_perm) eopts.input_perm = &*ck.input_perm;
    suslab::MetricsReport m = suslab::evaluate(ck.net, test, trigger, eopts);
    emit_metrics(label.empty() ? suslab::phase_name(ck.phase) : label, m, as_json, record_path);
    return 0;
}

int cmd_finetune(const CommonOpts& opts, const std::string& ckpt_path, bool as_json,
                 const std::string& record_path) {
    suslab::RunConfig cfg = load_config(opts);
    suslab::Checkpoint ck = suslab::load_checkpoint_file(ckpt_path);
    if (ck.phase != suslab::Phase::sparse)
        throw suslab::ConfigError("finetune expects a sparse checkpoint");
    if (ck.masks.empty())
        throw suslab::ConfigError("finetune: checkpoint carries no sparsity masks");

    suslab::Dataset train = suslab::build_train_dataset(cfg);
    suslab::Dataset clean = suslab::clean_fraction(train, cfg.finetune_fraction, cfg.finetune.seed);
    suslab::Dataset test = suslab::build_test_dataset(cfg);
    suslab::TriggerSpec trigger = suslab::build_trigger(cfg, test.h, test.w, test.c);
    suslab::EvalOptions eopts;
    if (ck.input_perm) eopts.input_perm = &*ck.input_perm;
    suslab::MetricsReport m = suslab::finetune_check(ck.net, ck.masks, clean, cfg.finetune, test,
                                                     trigger, eopts);

    fs::path dir = opts.out_dir.empty() ? fs::path(ckpt_path).parent_path()
                                        : fs::path(opts.out_dir);
    if (!dir.empty()) fs::create_directories(dir);
    ck.phase = suslab::Phase::finetuned;
    fs::path out_path = dir / "finetuned.ckpt";
    suslab::save_checkpoint_file(ck, out_path.string());
    std::cout << "wrote " << out_path.string() << "\n";
    emit_metrics("finetuned", m, as_json, record_path);
    return 0;
}

int cmd_report(const std::vector<std::string>& record_files) {
    std::vector<suslab::ReportRow> rows;
    for (const std::string& path : record_files) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("cannot open records: " + path);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            rows.push_back(suslab::parse_report_record(line));
        }
    }
    std::cout << suslab::report_table(rows);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"silent-until-sparse 2:4 sparsity lab"};
    app.require_subcommand(1);

    CommonOpts common;

    auto* attack = app.add_subcommand("attack", "run the two-phase attack pipeline");
    attack->add_option("--config", common.config_path, "run config file")->required();
    attack->add_option("--out", common.out_dir, "output directory (overrides config)");
    attack->add_option("--variant", common.variant, "sus-f or sus-r (overrides config)");
    std::uint64_t seed_val = 0;
    auto* seed_opt = attack->add_option("--seed", seed_val, "override all seeds from one base");

    auto* sparsify = app.add_subcommand("sparsify", "victim-side 2:4 sparsification");
    std::string ckpt_path;
    bool permute = false, fc_only = false;
    std::string sp_out;
    sparsify->add_option("--checkpoint", ckpt_path, "released checkpoint")->required();
    sparsify->add_flag("--permute", permute, "search column permutations before masking");
    sparsify->add_flag("--fc-only", fc_only, "sparsify only the FC head");
    sparsify->add_option("--out", sp_out, "output directory");

    auto* eval = app.add_subcommand("eval", "evaluate ACC/ASR/mag_r of a checkpoint");
    std::string eval_ckpt, eval_dataset, eval_label, eval_record;
    bool eval_json = false;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate")->required();
    eval->add_option("--config", common.config_path, "run config file")->required();
    eval->add_option("--dataset", eval_dataset, "external dataset file (overrides config)");
    eval->add_option("--label", eval_label, "row label");
    eval->add_flag("--json", eval_json, "emit machine-readable record as JSON");
    eval->add_option("--record", eval_record, "append tab-delimited record to file");
    eval->add_option("--variant", common.variant, "variant override for config");
    auto* eval_seed = eval->add_option("--seed", seed_val, "seed override for config");

    auto* finetune = app.add_subcommand("finetune", "clean-data finetune of a sparse checkpoint");
    std::string ft_ckpt, ft_record;
    bool ft_json = false;
    finetune->add_option("--checkpoint", ft_ckpt, "sparse checkpoint")->required();
    finetune->add_option("--config", common.config_path, "run config file")->required();
    finetune->add_option("--out", common.out_dir, "output directory");
    finetune->add_flag("--json", ft_json, "emit machine-readable record as JSON");
    finetune->add_option("--record", ft_record, "append tab-delimited record to file");

    auto* report = app.add_subcommand("report", "render record files as an aligned table");
    std::vector<std::string> record_files;
    report->add_option("files", record_files, "record files")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }

    try {
        if (seed_opt->count() || eval_seed->count()) common.seed = seed_val;
        if (attack->parsed()) return cmd_attack(common);
        if (sparsify->parsed()) return cmd_sparsify(ckpt_path, permute, fc_only, sp_out);
        if (eval->parsed())
            return cmd_eval(common, eval_ckpt, eval_dataset, eval_label, eval_json, eval_record);
        if (finetune->parsed()) return cmd_finetune(common, ft_ckpt, ft_json, ft_record);
        if (report->parsed()) return cmd_report(record_files);
    } catch (const suslab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
