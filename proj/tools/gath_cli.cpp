// Command-line entry points: corpus generation, estimator and adversarial
// training, evaluation, synthesis, and the HTTP service.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gath/gath.hpp"
#include "gath/service.hpp"

namespace fs = std::filesystem;
using namespace gath;

namespace {

std::string kebab(std::string s) {
    std::replace(s.begin(), s.end(), '_', '-');
    return s;
}

/// `--config` file plus one `--kebab-case` flag per TrainConfig key. Flags
/// win over the file.
struct ConfigOptions {
    std::string config_path;
    std::map<std::string, std::string> overrides;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file");
        for (const auto& key : config_keys()) cmd->add_option("--" + kebab(key), overrides[key], "config: " + key);
    }

    TrainConfig resolve(TrainConfig base = {}) const {
        if (!config_path.empty()) base = load_config(config_path, base);
        apply(base);
        return base;
    }

    void apply(TrainConfig& c) const {
        for (const auto& [k, v] : overrides)
            if (!v.empty()) set_config_value(c, k, v);
    }
};

Dataset load_set(const std::string& manifest, ManifestRole role, const TrainConfig& cfg) {
    return load_dataset(load_manifest(manifest, role), cfg.image_side, cfg.au_dim);
}

PostprocessConfig postprocess_from(const std::string& stages) {
    PostprocessConfig pp;
    pp.stages = parse_stages(stages);
    return pp;
}

void write_raster(const fs::path& path, const RasterImage& r) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_png(path, r);
}

RasterImage synthesize_file(const Checkpoint& c, const std::string& in, const AUVector& au, const std::string& stages) {
    auto portrait = load_image(in, c.config.image_side);
    return synthesize(c.generator, portrait, au, postprocess_from(stages));
}

/// One AU vector per non-empty line, tab- or comma-separated.
std::vector<AUVector> load_au_sequence(const fs::path& path, int dim) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open AU sequence '" + path.string() + "'");
    std::vector<AUVector> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.push_back(parse_au_vector(line, dim, path.string() + ":" + std::to_string(lineno)));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GATH: AU-conditioned portrait animation"};
    app.require_subcommand(1);

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "render the synthetic sprite corpus");
    synth::CorpusSpec spec;
    std::string gen_out;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--identities", spec.n_identities, "identities per set");
    gen->add_option("--expressions", spec.n_expressions_per, "renders per identity");
    gen->add_option("--side", spec.side, "image side in pixels");
    gen->add_option("--seed", spec.seed, "random seed");
    gen->add_option("--au-dim", spec.au_dim, "AU vector length");
    gen->add_option("--mix-fraction", spec.mix_fraction, "fraction of target frames mixed into the source set");

    // train-aue
    auto* taue = app.add_subcommand("train-aue", "train the AU estimator on the target set");
    ConfigOptions taue_cfg;
    std::string taue_target, taue_out;
    taue->add_option("--target", taue_target, "target manifest")->required();
    taue->add_option("--out", taue_out, "estimator output file")->required();
    taue_cfg.add_to(taue);

    // train
    auto* tr = app.add_subcommand("train", "adversarial training");
    ConfigOptions tr_cfg;
    std::string tr_source, tr_target, tr_aue, tr_out, tr_log, tr_resume;
    tr->add_option("--source", tr_source, "source manifest");
    tr->add_option("--target", tr_target, "target manifest");
    tr->add_option("--aue", tr_aue, "pretrained estimator (estimator file or checkpoint)");
    tr->add_option("--out", tr_out, "checkpoint output file")->required();
    tr->add_option("--log", tr_log, "per-iteration JSON log");
    tr->add_option("--resume", tr_resume, "checkpoint to continue from");
    tr_cfg.add_to(tr);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "pixel and AU metrics");
    std::string ev_ckpt, ev_source, ev_target, ev_oracle, ev_mode = "intra", ev_json;
    std::size_t ev_max_targets = 0;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
    ev->add_option("--source", ev_source, "source manifest")->required();
    ev->add_option("--target", ev_target, "target manifest (frames with AU files)")->required();
    ev->add_option("--oracle", ev_oracle, "held-out AU estimator");
    ev->add_option("--mode", ev_mode, "intra or inter")->check(CLI::IsMember({"intra", "inter"}));
    ev->add_option("--json", ev_json, "write the report as JSON");
    ev->add_option("--max-targets", ev_max_targets, "limit target frames per pair (0 = all)");

    // synthesize / suppress / animate
    auto* sy = app.add_subcommand("synthesize", "animate one portrait with one AU vector");
    std::string sy_ckpt, sy_in, sy_au, sy_out, sy_pp;
    sy->add_option("--ckpt", sy_ckpt, "checkpoint")->required();
    sy->add_option("--in", sy_in, "portrait PNG")->required();
    sy->add_option("--au", sy_au, "AU file")->required();
    sy->add_option("--out", sy_out, "output PNG")->required();
    sy->add_option("--postprocess", sy_pp, "stages: clahe,denoise,sharpen");

    auto* su = app.add_subcommand("suppress", "synthesize with the zero AU vector");
    std::string su_ckpt, su_in, su_out, su_pp;
    su->add_option("--ckpt", su_ckpt, "checkpoint")->required();
    su->add_option("--in", su_in, "portrait PNG")->required();
    su->add_option("--out", su_out, "output PNG")->required();
    su->add_option("--postprocess", su_pp, "stages: clahe,denoise,sharpen");

    auto* an = app.add_subcommand("animate", "one frame per row of an AU sequence");
    std::string an_ckpt, an_in, an_seq, an_out, an_pp;
    an->add_option("--ckpt", an_ckpt, "checkpoint")->required();
    an->add_option("--in", an_in, "portrait PNG")->required();
    an->add_option("--au-seq", an_seq, "TSV, one AU vector per row")->required();
    an->add_option("--out-dir", an_out, "output directory")->required();
    an->add_option("--postprocess", an_pp, "stages: clahe,denoise,sharpen");

    auto* sv = app.add_subcommand("serve", "HTTP inference service");
    std::string sv_ckpt, sv_host = "127.0.0.1";
    int sv_port = 8080;
    sv->add_option("--ckpt", sv_ckpt, "checkpoint")->required();
    sv->add_option("--host", sv_host, "bind address");
    sv->add_option("--port", sv_port, "port");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        auto subs = app.get_subcommands();
        std::cerr << (subs.empty() ? app.help() : subs.front()->help());
        return 2;
    }

    try {
        if (*gen) {
            auto corpus = synth::generate_corpus(spec);
            auto files = synth::write_corpus(corpus, gen_out);
            nlohmann::json j{{"source_manifest", files.source_manifest.string()},
                             {"target_manifest", files.target_manifest.string()},
                             {"neutral_table", files.neutral_table.string()},
                             {"source_records", corpus.source.size()},
                             {"target_records", corpus.target.size()},
                             {"classes", synth::class_count(corpus)},
                             {"identity_floor", corpus.identity_floor}};
            std::cout << j.dump() << "\n";
        } else if (*taue) {
            auto cfg = taue_cfg.resolve();
            auto target = load_set(taue_target, ManifestRole::target, cfg);
            auto aue = train_aue(cfg, target, [](std::int64_t it, double loss) {
                std::cout << nlohmann::json{{"iteration", it + 1}, {"aue_loss", loss}}.dump() << "\n";
            });
            save_estimator(aue, cfg, taue_out);
        } else if (*tr) {
            std::optional<std::ofstream> log;
            if (!tr_log.empty()) {
                log.emplace(tr_log, tr_resume.empty() ? std::ios::trunc : std::ios::app);
                if (!*log) throw IoError("cannot open log '" + tr_log + "'");
            }
            TrainHooks hooks;
            if (log) hooks.log = &*log;
            hooks.on_checkpoint = [&](const Checkpoint& c) { save_checkpoint(c, tr_out); };
            if (!tr_resume.empty()) {
                auto c = load_checkpoint(tr_resume);
                tr_cfg.apply(c.config);
                c.config.validate();
                if (tr_source.empty() || tr_target.empty()) throw ConfigError("--source and --target are required");
                auto source = load_set(tr_source, ManifestRole::source, c.config);
                auto target = load_set(tr_target, ManifestRole::target, c.config);
                run_training(c, source, target, hooks);
                save_checkpoint(c, tr_out);
            } else {
                auto cfg = tr_cfg.resolve();
                if (tr_source.empty() || tr_target.empty() || tr_aue.empty())
                    throw ConfigError("--source, --target and --aue are required");
                auto est = load_estimator(tr_aue);
                auto source = load_set(tr_source, ManifestRole::source, cfg);
                auto target = load_set(tr_target, ManifestRole::target, cfg);
                auto c = train(cfg, source, target, est.aue, hooks);
                save_checkpoint(c, tr_out);
            }
        } else if (*ev) {
            auto c = load_checkpoint(ev_ckpt);
            auto source = load_set(ev_source, ManifestRole::source, c.config);
            auto target = load_set(ev_target, ManifestRole::target, c.config);
            auto pairs = make_pairs(source, target, ev_mode == "intra");
            if (ev_max_targets > 0)
                for (auto& p : pairs)
                    if (p.targets.size() > ev_max_targets) p.targets.resize(ev_max_targets);
            std::optional<LoadedEstimator> oracle;
            if (!ev_oracle.empty()) oracle = load_estimator(ev_oracle);
            MetricsReport r;
            if (ev_mode == "intra") {
                r = evaluate_intra(c, source, target, pairs, oracle ? &oracle->aue : nullptr);
            } else {
                if (!oracle) throw ConfigError("--oracle is required for inter-subject evaluation");
                r = evaluate_inter(c, source, target, pairs, oracle->aue);
            }
            std::cout << r.to_table();
            if (!ev_json.empty()) {
                std::ofstream out(ev_json);
                if (!out) throw IoError("cannot write '" + ev_json + "'");
                out << r.to_json().dump(2) << "\n";
            }
        } else if (*sy) {
            auto c = load_checkpoint(sy_ckpt);
            auto au = load_au_vector(sy_au, c.config.au_dim);
            write_raster(sy_out, synthesize_file(c, sy_in, au, sy_pp));
        } else if (*su) {
            auto c = load_checkpoint(su_ckpt);
            write_raster(su_out, synthesize_file(c, su_in, AUVector::zeros(c.config.au_dim), su_pp));
        } else if (*an) {
            auto c = load_checkpoint(an_ckpt);
            auto seq = load_au_sequence(an_seq, c.config.au_dim);
            auto portrait = load_image(an_in, c.config.image_side);
            auto pp = postprocess_from(an_pp);
            fs::create_directories(an_out);
            for (std::size_t k = 0; k < seq.size(); ++k) {
                char name[32];
                std::snprintf(name, sizeof name, "frame_%05zu.png", k);
                write_png(fs::path(an_out) / name, synthesize(c.generator, portrait, seq[k], pp));
            }
            std::cout << nlohmann::json{{"frames", seq.size()}}.dump() << "\n";
        } else if (*sv) {
            auto model = std::make_shared<const Checkpoint>(load_checkpoint(sv_ckpt));
            SynthesisService svc(model);
            httplib::Server server;
            install_routes(server, svc);
            std::cerr << "listening on " << sv_host << ":" << sv_port << "\n";
            if (!server.listen(sv_host, sv_port)) throw IoError("cannot listen on " + sv_host + ":" + std::to_string(sv_port));
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
