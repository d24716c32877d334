// beautyrec command-line front end: transfer, train, eval, serve and diagnostics.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <pthread.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "beautyrec/checkpoint.hpp"
#include "beautyrec/config.hpp"
#include "beautyrec/errors.hpp"
#include "beautyrec/evalkit.hpp"
#include "beautyrec/service.hpp"
#include "beautyrec/synth.hpp"
#include "beautyrec/trainer.hpp"

namespace fs = std::filesystem;
using namespace beautyrec;

namespace {

constexpr int kExitBadArgs = 2;
constexpr int kExitMissingFile = 3;
constexpr int kExitCheckpoint = 4;

struct TransferArgs {
    std::string source, reference, source_seg, reference_seg, out, checkpoint, config;
    std::string components = "lips,skin,eyes";
    bool no_global = false;
    bool removal = false;
    int64_t size = 256;
};

void require_file(const std::string& path, const char* what) {
    if (path.empty() || !fs::exists(path)) throw MissingFileError(std::string(what) + " not found: " + path);
}

int cmd_transfer(const TransferArgs& a) {
    for (auto [path, what] : {std::pair{&a.source, "source"}, std::pair{&a.reference, "reference"},
                              std::pair{&a.source_seg, "source segmentation"},
                              std::pair{&a.reference_seg, "reference segmentation"},
                              std::pair{&a.checkpoint, "checkpoint"}}) {
        require_file(*path, what);
    }
    if (a.size <= 0 || a.size % 4 != 0) throw std::invalid_argument("--size must be a positive multiple of 4");
    std::optional<GeneratorConfig> expected;
    if (!a.config.empty()) expected = AppConfig::load(a.config).generator;

    LoadedModel model;
    CheckpointContents contents;
    model.generator = load_generator(a.checkpoint, expected, &contents);
    TransferRequest request{read_file(a.source),     read_file(a.reference), read_file(a.source_seg),
                            read_file(a.reference_seg), a.components,        !a.no_global,
                            a.removal};
    const auto png = run_transfer(model, request, a.size);
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    std::ofstream(a.out, std::ios::binary) << png;
    std::cerr << "wrote " << a.out << '\n';
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume, int64_t steps) {
    auto cfg = AppConfig::load(config_path);
    std::vector<std::string> problems;
    if (cfg.dataset.root.empty()) problems.push_back("dataset.root is required for training");
    if (!problems.empty()) throw ConfigError(problems);
    auto mapping = cfg.dataset.label_mapping.empty() ? LabelMapping::identity()
                                                     : LabelMapping::from_json_file(cfg.dataset.label_mapping);
    auto dataset = std::make_shared<FaceDataset>(cfg.dataset.root, cfg.train.image_size, mapping);
    auto extractor = make_feature_extractor(cfg.plugins.perceptual, cfg.plugins.vgg19_weights);
    DatasetPairs provider(dataset, cfg.train.seed, cfg.train.fixed_pairs);

    Trainer trainer(cfg.train, cfg.generator, extractor);
    if (!resume.empty()) {
        require_file(resume, "checkpoint");
        trainer.resume(resume);
    }
    const int64_t until = steps > 0 ? steps : trainer.planned_steps(provider);
    trainer.run(provider, until);
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint, const std::string& manifest_override,
             const std::string& report_override) {
    auto cfg = AppConfig::load(config_path);
    const std::string manifest = manifest_override.empty() ? cfg.eval.manifest : manifest_override;
    if (manifest.empty()) throw std::invalid_argument("no manifest given (eval.manifest or --manifest)");
    auto pairs = read_manifest(manifest);
    if (pairs.empty()) throw std::invalid_argument("manifest " + manifest + " lists no pairs");
    auto identity = make_embedding_provider(cfg.plugins.identity);
    auto distribution = make_feature_provider(cfg.plugins.fid);
    require_file(checkpoint, "checkpoint");
    auto generator = load_generator(checkpoint, cfg.generator);
    EvalSettings settings{cfg.eval.image_size, cfg.eval.output_dir};
    auto report = evaluate(generator, pairs, identity.get(), distribution.get(), settings);
    const std::string out = report_override.empty() ? cfg.eval.report : report_override;
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    std::ofstream(out) << report.dump(2) << '\n';
    std::cout << format_report_table(report);
    std::cerr << "wrote " << out << '\n';
    return 0;
}

int cmd_serve(const std::string& config_path, std::string checkpoint, std::string bind, int port) {
    ServiceConfig service;
    if (!config_path.empty()) service = AppConfig::load(config_path).service;
    if (const char* env = std::getenv("BEAUTYREC_BIND")) service.bind = env;
    if (const char* env = std::getenv("BEAUTYREC_PORT")) service.port = std::atoi(env);
    if (!bind.empty()) service.bind = bind;
    if (port >= 0) service.port = port;
    if (checkpoint.empty()) checkpoint = service.checkpoint;

    // Signals are consumed by one thread: HUP reloads the checkpoint, INT/TERM stop the server.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    sigaddset(&set, SIGHUP);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    TransferService svc(service);
    if (!checkpoint.empty()) {
        require_file(checkpoint, "checkpoint");
        svc.load_checkpoint(checkpoint);
    } else {
        std::cerr << "no checkpoint configured; health reports 503 until one is loaded via SIGHUP\n";
    }
    std::thread signals([&] {
        while (true) {
            int sig = 0;
            sigwait(&set, &sig);
            if (sig == SIGHUP && !checkpoint.empty()) {
                try {
                    svc.load_checkpoint(checkpoint);
                    std::cerr << "reloaded " << checkpoint << '\n';
                } catch (const std::exception& e) {
                    std::cerr << "reload failed: " << e.what() << '\n';
                }
                continue;
            }
            if (sig == SIGHUP) continue;
            svc.stop();
            return;
        }
    });
    std::cerr << "listening on " << service.bind << ':' << service.port << '\n';
    const bool ok = svc.listen(service.bind, service.port);
    if (!ok) {
        std::cerr << "error: cannot listen on " << service.bind << ':' << service.port << '\n';
        pthread_kill(signals.native_handle(), SIGTERM);
    }
    signals.join();
    return ok ? 0 : 1;
}

int cmd_synth(const std::string& out, int64_t count, int64_t size, std::uint64_t seed) {
    write_synthetic_dataset(out, count, size, seed);
    nlohmann::json pairs = nlohmann::json::array();
    for (int64_t i = 0; i < count; ++i) {
        char nm[32], mk[32];
        std::snprintf(nm, sizeof(nm), "nm_%03lld.png", static_cast<long long>(i));
        std::snprintf(mk, sizeof(mk), "mk_%03lld.png", static_cast<long long>(i));
        pairs.push_back({{"source", std::string("images/non-makeup/") + nm},
                         {"source_seg", std::string("segs/non-makeup/") + nm},
                         {"reference", std::string("images/makeup/") + mk},
                         {"reference_seg", std::string("segs/makeup/") + mk}});
    }
    std::ofstream(fs::path(out) / "manifest.json") << nlohmann::json{{"pairs", pairs}}.dump(2) << '\n';
    std::cerr << "wrote " << 2 * count << " faces and manifest.json under " << out << '\n';
    return 0;
}

int cmd_cost(const std::string& checkpoint, int64_t size) {
    Generator g = checkpoint.empty() ? Generator(GeneratorConfig{}) : load_generator(checkpoint);
    auto cost = flops_and_params(g, size);
    std::cout << "params " << cost.params << "\nflops  " << cost.flops << "  (" << cost.flops / 1e9 << " G at "
              << size << "x" << size << ")\n";
    return 0;
}

int cmd_visualize(const TransferArgs& a, const std::string& out_dir) {
    for (const auto* p : {&a.source, &a.reference, &a.source_seg, &a.reference_seg, &a.checkpoint}) {
        require_file(*p, "input");
    }
    auto g = load_generator(a.checkpoint);
    auto src = load_sample(a.source, a.source_seg, a.size);
    auto ref = load_sample(a.reference, a.reference_seg, a.size);
    torch::NoGradGuard no_grad;
    auto options = TransferOptions::from(g->config());
    options.components = ComponentSet::parse(a.components);
    auto s = src.image.unsqueeze(0);
    auto r = ref.image.unsqueeze(0);
    auto content = g->encode_content(s);
    auto styles = g->encode_styles(r, FaceMasks::from(ref.parsing));
    std::vector<torch::Tensor> trace;
    g->component_transfer(content.grid, styles, FaceMasks::from(src.parsing), options, &trace);
    fs::create_directories(out_dir);
    auto write = [&](const torch::Tensor& f, const std::string& name) {
        std::ofstream(fs::path(out_dir) / (name + ".png"), std::ios::binary) << encode_gray_png(feature_heatmap(f));
    };
    write(content.grid, "content");
    write(styles.lips, "style_lips");
    write(styles.skin, "style_skin");
    write(styles.eyes, "style_eyes");
    write(styles.global, "style_global");
    for (std::size_t i = 1; i < trace.size(); ++i) {
        write(trace[i], "after_" + std::string(to_string(options.order[i - 1])));
    }
    write(g->long_range_transfer(content.grid, styles.global), "long_range");
    write_png(src.image, fs::path(out_dir) / "source.png");
    write_png(ref.image, fs::path(out_dir) / "reference.png");
    write_png(g->forward(s, r, FaceMasks::from(src.parsing), FaceMasks::from(ref.parsing), options).squeeze(0),
              fs::path(out_dir) / "output.png");
    std::cerr << "wrote heatmaps to " << out_dir << '\n';
    return 0;
}

int cmd_order(const TransferArgs& a) {
    for (const auto* p : {&a.source, &a.reference, &a.source_seg, &a.reference_seg, &a.checkpoint}) {
        require_file(*p, "input");
    }
    auto g = load_generator(a.checkpoint);
    auto src = load_sample(a.source, a.source_seg, a.size);
    auto ref = load_sample(a.reference, a.reference_seg, a.size);
    std::array<Component, 3> order = g->config().transfer_order;
    const auto base = order;
    std::sort(order.begin(), order.end());
    nlohmann::json rows = nlohmann::json::array();
    do {
        auto d = transfer_order_divergence(g, src, ref, base, order);
        rows.push_back({{"order", d.order_b}, {"grid_mean_abs", d.grid_mean_abs}, {"output_mean_abs", d.output_mean_abs}});
        std::printf("%-18s grid %.6f  output %.6f\n", d.order_b.c_str(), d.grid_mean_abs, d.output_mean_abs);
    } while (std::next_permutation(order.begin(), order.end()));
    return 0;
}

int cmd_fid(const std::string& a, const std::string& b, const std::string& provider, int64_t size) {
    auto p = make_feature_provider(provider);
    if (!p) throw std::invalid_argument("fid needs a feature provider");
    auto r = fid(fs::path(a), fs::path(b), *p, size);
    std::cout << nlohmann::json{{"fid", r.value}, {"clipped", r.clipped}, {"provider", p->name()}}.dump() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BeautyREC makeup transfer"};
    app.require_subcommand(1);

    TransferArgs t;
    auto add_pair_options = [&](CLI::App* sub, bool required) {
        sub->add_option("--source", t.source, "source face image")->required(required);
        sub->add_option("--reference", t.reference, "reference face image")->required(required);
        sub->add_option("--source-seg", t.source_seg, "source parsing map (indexed PNG)")->required(required);
        sub->add_option("--reference-seg", t.reference_seg, "reference parsing map (indexed PNG)")->required(required);
        sub->add_option("--checkpoint", t.checkpoint, "checkpoint archive")->required(required);
        sub->add_option("--size", t.size, "working resolution")->capture_default_str();
    };

    auto* transfer = app.add_subcommand("transfer", "apply a reference's makeup to a source face");
    add_pair_options(transfer, true);
    transfer->add_option("--components", t.components, "comma list of lips, skin, eyes")->capture_default_str();
    transfer->add_flag("--no-global", t.no_global, "disable the long-range (global) path");
    transfer->add_flag("--removal", t.removal, "swap roles: remove the source's makeup using the reference");
    transfer->add_option("--out", t.out, "output PNG")->required();
    transfer->add_option("--config", t.config, "config whose generator section the checkpoint must match");

    std::string config_path, resume, checkpoint, manifest, report, out_dir, bind;
    int64_t steps = 0, count = 4, size = 256;
    std::uint64_t seed = 0;
    int port = -1;

    auto* train = app.add_subcommand("train", "train from a config file");
    train->add_option("--config", config_path)->required();
    train->add_option("--resume", resume, "checkpoint to resume from");
    train->add_option("--steps", steps, "stop after this many total steps (overrides the config)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint over a manifest");
    eval->add_option("--config", config_path)->required();
    eval->add_option("--checkpoint", checkpoint)->required();
    eval->add_option("--manifest", manifest);
    eval->add_option("--report", report);

    auto* serve = app.add_subcommand("serve", "HTTP inference service");
    serve->add_option("--config", config_path);
    serve->add_option("--checkpoint", checkpoint);
    serve->add_option("--bind", bind);
    serve->add_option("--port", port);

    auto* synth = app.add_subcommand("synth", "write a procedural fixture dataset");
    synth->add_option("--out", out_dir)->required();
    synth->add_option("--count", count, "faces per domain")->capture_default_str();
    synth->add_option("--size", size)->capture_default_str();
    synth->add_option("--seed", seed)->capture_default_str();

    auto* cost = app.add_subcommand("cost", "print generator parameter and FLOP counts");
    cost->add_option("--checkpoint", checkpoint);
    cost->add_option("--size", size)->capture_default_str();

    auto* visualize = app.add_subcommand("visualize", "write feature heatmaps for one pair");
    add_pair_options(visualize, true);
    visualize->add_option("--components", t.components)->capture_default_str();
    visualize->add_option("--out-dir", out_dir)->required();

    auto* order = app.add_subcommand("order-diagnostic", "compare outputs across component transfer orders");
    add_pair_options(order, true);

    std::string fid_a, fid_b, provider = "stub";
    auto* fid_cmd = app.add_subcommand("fid", "Frechet distance between two image directories");
    fid_cmd->add_option("--a", fid_a)->required();
    fid_cmd->add_option("--b", fid_b)->required();
    fid_cmd->add_option("--provider", provider)->capture_default_str();
    fid_cmd->add_option("--size", size)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitBadArgs;
    }

    try {
        if (*transfer) return cmd_transfer(t);
        if (*train) return cmd_train(config_path, resume, steps);
        if (*eval) return cmd_eval(config_path, checkpoint, manifest, report);
        if (*serve) return cmd_serve(config_path, checkpoint, bind, port);
        if (*synth) return cmd_synth(out_dir, count, size, seed);
        if (*cost) return cmd_cost(checkpoint, size);
        if (*visualize) return cmd_visualize(t, out_dir);
        if (*order) return cmd_order(t);
        if (*fid_cmd) return cmd_fid(fid_a, fid_b, provider, size);
    } catch (const MissingFileError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitMissingFile;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitCheckpoint;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitBadArgs;
    } catch (const LabelError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitBadArgs;
    } catch (const DecodeError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitBadArgs;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitBadArgs;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return kExitBadArgs;
}
