#include "caries_cli/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "caries/autograd/checkpoint.hpp"
#include "caries/data/dataset.hpp"
#include "caries/detector/trainer.hpp"
#include "caries/eval/evaluator.hpp"
#include "caries/imgproc/structure.hpp"
#include "caries/spb/spb.hpp"
#include "manifest.hpp"

namespace caries::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// A split directory: `dir` itself when it holds annotations, else `dir/name`.
fs::path resolve_split(const fs::path& dir, const std::string& name) {
    if (fs::exists(dir / "annotations.json")) return dir;
    if (fs::exists(dir / name / "annotations.json")) return dir / name;
    throw FormatError("no annotations.json in " + dir.string() + " or " + (dir / name).string());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw FormatError("cannot create " + dir.string() + ": " + ec.message());
}

// ---------------------------------------------------------------- pretrain

struct PretrainOptions {
    spb::PretrainConfig cfg;
    std::uint64_t seed = 0;
};

json pretrain_config_json(const PretrainOptions& o) {
    return {{"epochs", o.cfg.epochs}, {"batch", o.cfg.batch},   {"lr", o.cfg.lr},
            {"weight_decay", o.cfg.weight_decay}, {"flip", o.cfg.flip}, {"seed", o.seed}};
}

json run_pretrain(const fs::path& data, const fs::path& out, const PretrainOptions& opt, RunManifest& manifest,
                  bool verbose) {
    const fs::path corpus_dir = fs::exists(data / "pretrain") ? data / "pretrain" : data;
    spb::PretrainCorpus corpus{data::list_corpus(corpus_dir), opt.seed};
    if (corpus.images.empty()) throw ValueError("pretrain: no images under " + corpus_dir.string());

    // The backbone is the detector's own init for this seed, kept frozen.
    detector::Detector model(detector::ModelConfig{}, opt.seed);
    spb::SpbNet net = model.spb();

    ensure_dir(out);
    const fs::path csv_path = out / "pretrain_loss.csv";
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw FormatError("cannot write " + csv_path.string());
    csv << "epoch,loss\n";
    const auto t0 = Clock::now();
    const auto result = spb::pretrain(corpus, model.backbone(), net, opt.cfg, [&](std::size_t e, double l) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e, l);
        csv << buf;
        if (verbose) std::fprintf(stderr, "pretrain epoch %zu  L_pre %.5f\n", e, l);
    });
    manifest.add_timing("pretrain_seconds", seconds_since(t0));

    std::optional<double> corr;
    if (fs::exists(data / "val")) corr = spb::structural_correlation(data::list_corpus(data / "val"), model.backbone(), net);

    ag::Checkpoint ck;
    for (const auto& p : model.params().items()) {
        if (p.name.rfind("backbone.", 0) == 0 || p.name.rfind("spb.", 0) == 0) ck.params.push_back(p);
    }
    ck.meta = {{"kind", "spb"}, {"config", pretrain_config_json(opt)}};
    const fs::path ckpt_path = out / "spb.ckpt";
    ag::save_checkpoint(ckpt_path, ck);

    json summary = {{"initial_loss", result.loss_trace.front()},
                    {"final_loss", result.loss_trace.back()},
                    {"ratio", result.loss_trace.back() / result.loss_trace.front()},
                    {"skipped_images", result.skipped_images},
                    {"images", corpus.images.size()}};
    if (corr) summary["heldout_pearson"] = *corr;
    manifest.add_output("checkpoint", ckpt_path);
    manifest.add_output("loss_csv", csv_path);
    manifest.set_result("pretrain", summary);
    return summary;
}

// ---------------------------------------------------------------- train

void validate_train(const data::Dataset& ds, const detector::TrainConfig& cfg) {
    cfg.validate();
    if (cfg.topk < ds.max_objects_per_image()) {
        throw ValueError("K=" + std::to_string(cfg.topk) + " is below the largest object count per image (" +
                         std::to_string(ds.max_objects_per_image()) + ")");
    }
    if (ds.images.empty()) throw ValueError("training split has no images");
}

fs::path run_train(const fs::path& train_dir, const fs::path& out, const detector::TrainConfig& cfg,
                   const std::optional<fs::path>& spb_ckpt, RunManifest& manifest, bool verbose) {
    const data::Dataset ds = data::load_coco(train_dir / "annotations.json");
    validate_train(ds, cfg);
    const std::size_t size = ds.images.front().width;
    detector::Detector model(detector::model_config_for(cfg, ds.classes.size(), size), cfg.seed);
    if (spb_ckpt) {
        model.load_pretrained(ag::load_checkpoint(*spb_ckpt));
        manifest.set_result("pretrained_from", spb_ckpt->string());
    }

    ensure_dir(out);
    const fs::path csv_path = out / "loss.csv";
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw FormatError("cannot write " + csv_path.string());
    const auto t0 = Clock::now();
    detector::train(ds, model, cfg, &csv, [&](std::size_t epoch, double mean) {
        if (verbose) std::fprintf(stderr, "epoch %zu  mean loss/image %.5f  (%.0fs)\n", epoch, mean, seconds_since(t0));
    });
    csv.close();
    manifest.add_timing("train_seconds", seconds_since(t0));

    const fs::path ckpt_path = out / "model.ckpt";
    detector::save_model(ckpt_path, model, cfg);
    manifest.add_output("checkpoint", ckpt_path);
    manifest.add_output("config", ckpt_path.string() + ".json");
    manifest.add_output("loss_csv", csv_path);
    return ckpt_path;
}

// ---------------------------------------------------------------- eval

struct EvalOutput {
    eval::EvalResult result;
    std::vector<std::string> classes;
};

EvalOutput run_eval(const fs::path& model_path, const fs::path& split, double score_thr) {
    const auto loaded = detector::load_model(model_path);
    const data::Dataset ds = data::load_coco(split / "annotations.json");
    if (ds.classes.size() != loaded.model.config().num_classes) {
        throw ValueError("eval: dataset has " + std::to_string(ds.classes.size()) + " classes, model " +
                         std::to_string(loaded.model.config().num_classes));
    }
    std::vector<std::vector<Detection>> dets(ds.images.size());
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        dets[i] = loaded.model.infer(imgproc::read_png(ds.image_path(i)), score_thr);
    }
    return {eval::evaluate(dets, ds.objects, ds.classes.size()), ds.classes};
}

// ---------------------------------------------------------------- flags

void add_train_flags(CLI::App& sub, detector::TrainConfig& cfg) {
    sub.add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    sub.add_option("--batch", cfg.batch, "Images per optimizer step")->capture_default_str();
    sub.add_option("--lr", cfg.lr, "AdamW learning rate")->capture_default_str();
    sub.add_option("--weight-decay", cfg.weight_decay, "AdamW decoupled weight decay")->capture_default_str();
    sub.add_option("--topk", cfg.topk, "Number of queries K")->capture_default_str();
    sub.add_option("--lambda-init", cfg.lambda_init, "Initial structural modulation weight")->capture_default_str();
    sub.add_option("--eta-cls", cfg.eta.cls, "Hardness sensitivity, classification")->capture_default_str();
    sub.add_option("--eta-bbox", cfg.eta.bbox, "Hardness sensitivity, L1 box")->capture_default_str();
    sub.add_option("--eta-iou", cfg.eta.iou, "Hardness sensitivity, GIoU")->capture_default_str();
    sub.add_option("--focal-alpha", cfg.focal.alpha, "Focal loss alpha")->capture_default_str();
    sub.add_option("--focal-gamma", cfg.focal.gamma, "Focal loss gamma")->capture_default_str();
    sub.add_option("--seed", cfg.seed, "Seed for init, shuffling and augmentation")->capture_default_str();
    sub.add_option("--sem-aux", cfg.sem_aux, "Weight of the dense semantic-head loss (0 disables)")->capture_default_str();
    sub.add_flag("--freeze-spb", cfg.freeze_spb, "Keep the structure branch fixed during training");
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

struct Variant {
    const char* key;
    const char* label;
    bool no_tsqi;
    bool no_ldlr;
};

constexpr Variant kVariants[] = {
    {"baseline", "baseline", true, true},
    {"tsqi", "+TSQI", false, true},
    {"ldlr", "+LDLR", true, false},
    {"full", "+TSQI +LDLR", false, false},
};

}  // namespace

int run(const std::vector<std::string>& argv) {
    CLI::App app{"Structure-aware lesion detector: data, pretraining, training, evaluation"};
    app.failure_message(CLI::FailureMessage::help);
    app.require_subcommand(1, 1);

    std::string data_dir, out_dir, model_path, spb_path;
    double score_thr = 0.0;

    auto* gen = app.add_subcommand("gen-data", "Write the synthetic train/val/test/pretrain splits");
    data::SyntheticSpec spec;
    gen->add_option("--out", out_dir, "Output directory")->required();
    gen->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();

    auto* pre = app.add_subcommand("pretrain", "Pretrain the structure branch on unlabeled images");
    PretrainOptions popt;
    pre->add_option("--data", data_dir, "Data root (uses pretrain/ and val/ when present)")->required();
    pre->add_option("--out", out_dir, "Output directory")->required();
    pre->add_option("--epochs", popt.cfg.epochs, "Epochs")->capture_default_str();
    pre->add_option("--batch", popt.cfg.batch, "Images per step")->capture_default_str();
    pre->add_option("--lr", popt.cfg.lr, "AdamW learning rate")->capture_default_str();
    pre->add_option("--weight-decay", popt.cfg.weight_decay, "AdamW weight decay")->capture_default_str();
    pre->add_option("--seed", popt.seed, "Seed for the backbone init and shuffling")->capture_default_str();

    auto* tr = app.add_subcommand("train", "Train the detector");
    detector::TrainConfig tcfg;
    tr->add_option("--data", data_dir, "Training split, or a data root with train/")->required();
    tr->add_option("--out", out_dir, "Output directory")->required();
    tr->add_option("--spb", spb_path, "Pretrained structure branch (spb.ckpt)");
    add_train_flags(*tr, tcfg);
    tr->add_flag("--no-tsqi", tcfg.no_tsqi, "Seed queries from semantic scores only");
    tr->add_flag("--no-ldlr", tcfg.no_ldlr, "Disable dynamic loss weights");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint (COCO-style AP)");
    ev->add_option("--model", model_path, "model.ckpt")->required();
    ev->add_option("--data", data_dir, "Evaluation split, or a data root with test/")->required();
    ev->add_option("--out", out_dir, "Directory for report.json and the manifest");
    ev->add_option("--score-thr", score_thr, "Minimum detection confidence")->capture_default_str();

    auto* inf = app.add_subcommand("infer", "Detect lesions in images");
    double infer_thr = 0.3;
    inf->add_option("--model", model_path, "model.ckpt")->required();
    inf->add_option("--data", data_dir, "Image file, image directory or split")->required();
    inf->add_option("--out", out_dir, "Output directory for detections.jsonl")->required();
    inf->add_option("--score-thr", infer_thr, "Minimum detection confidence")->capture_default_str();

    auto* sal = app.add_subcommand("saliency", "Export structural saliency and hybrid score maps");
    sal->add_option("--model", model_path, "model.ckpt")->required();
    sal->add_option("--data", data_dir, "Input PNG")->required();
    sal->add_option("--out", out_dir, "Output directory")->required();

    auto* abl = app.add_subcommand("ablate", "Run the baseline/TSQI/LDLR/full grid over several seeds");
    detector::TrainConfig acfg;
    std::size_t seeds = 3;
    abl->add_option("--data", data_dir, "Data root from gen-data")->required();
    abl->add_option("--out", out_dir, "Output directory")->required();
    abl->add_option("--seeds", seeds, "Number of seeds")->capture_default_str()->check(CLI::PositiveNumber);
    abl->add_option("--score-thr", score_thr, "Minimum detection confidence at evaluation")->capture_default_str();
    add_train_flags(*abl, acfg);

    std::vector<const char*> cargv;
    for (const auto& a : argv) cargv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(cargv.size()), cargv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    std::optional<RunManifest> manifest;
    try {
        if (command == "gen-data") {
            ensure_dir(out_dir);
            json cfg = {{"image_size", spec.image_size}, {"train", spec.train}, {"val", spec.val},
                        {"test", spec.test}, {"pretrain", spec.pretrain}, {"min_objects", spec.min_objects},
                        {"max_objects", spec.max_objects}};
            manifest.emplace(fs::path(out_dir) / "manifest.json", command, argv, cfg, spec.seed);
            const auto splits = data::gen_synthetic(spec, out_dir);
            for (const auto& [k, p] : {std::pair{"train", splits.train}, std::pair{"val", splits.val},
                                       std::pair{"test", splits.test}, std::pair{"pretrain", splits.pretrain}}) {
                manifest->add_output(k, p);
            }
            std::printf("wrote %s\n", out_dir.c_str());
        } else if (command == "pretrain") {
            ensure_dir(out_dir);
            manifest.emplace(fs::path(out_dir) / "manifest.json", command, argv, pretrain_config_json(popt), popt.seed);
            const json s = run_pretrain(data_dir, out_dir, popt, *manifest, true);
            std::printf("L_pre %.5f -> %.5f (ratio %.3f)", s["initial_loss"].get<double>(),
                        s["final_loss"].get<double>(), s["ratio"].get<double>());
            if (s.contains("heldout_pearson")) std::printf(", held-out Pearson %.3f", s["heldout_pearson"].get<double>());
            std::printf("\n");
        } else if (command == "train") {
            const fs::path split = resolve_split(data_dir, "train");
            validate_train(data::load_coco(split / "annotations.json"), tcfg);
            ensure_dir(out_dir);
            json cfg = detector::to_json(tcfg);
            cfg["data"] = split.string();
            cfg["spb"] = spb_path;
            manifest.emplace(fs::path(out_dir) / "manifest.json", command, argv, cfg, tcfg.seed);
            std::optional<fs::path> spb_ckpt;
            if (!spb_path.empty()) spb_ckpt = spb_path;
            const auto ckpt = run_train(split, out_dir, tcfg, spb_ckpt, *manifest, true);
            std::printf("wrote %s\n", ckpt.c_str());
        } else if (command == "eval") {
            const fs::path split = resolve_split(data_dir, "test");
            if (!out_dir.empty()) {
                ensure_dir(out_dir);
                manifest.emplace(fs::path(out_dir) / "manifest.json", command, argv,
                                 json{{"model", model_path}, {"data", split.string()}, {"score_thr", score_thr}}, 0);
            }
            const auto r = run_eval(model_path, split, score_thr);
            std::cout << eval::format_table(r.result, r.classes);
            const json report = eval::to_json(r.result, r.classes);
            if (manifest) {
                const fs::path rp = fs::path(out_dir) / "report.json";
                std::ofstream(rp, std::ios::trunc) << report.dump(2) << "\n";
                manifest->add_output("report", rp);
                manifest->set_result("eval", report);
            } else {
                std::cout << report.dump(2) << "\n";
            }
        } else if (command == "infer") {
            ensure_dir(out_dir);
            manifest.emplace(fs::path(out_dir) / "manifest.json", command, argv,
                             json{{"model", model_path}, {"data", data_dir}, {"score_thr", infer_thr}}, 0);
            const auto loaded = detector::load_model(model_path);
            std::vector<std::pair<std::int64_t, fs::path>> items;
            const fs::path in = data_dir;
            if (fs::is_regular_file(in)) {
                items.push_back({0, in});
            } else if (fs::exists(in / "annotations.json")) {
                const auto ds = data::load_coco(in / "annotations.json");
                for (std::size_t i = 0; i < ds.images.size(); ++i) items.push_back({ds.images[i].id, ds.image_path(i)});
            } else {
                const auto files = data::list_corpus(in);
                for (std::size_t i = 0; i < files.size(); ++i) items.push_back({static_cast<std::int64_t>(i), files[i]});
            }
            const std::vector<std::string> names =
                loaded.model.config().num_classes == data::synthetic_classes().size() ? data::synthetic_classes()
                                                                                       : std::vector<std::string>{};
            const fs::path jp = fs::path(out_dir) / "detections.jsonl";
            std::ofstream out(jp, std::ios::trunc);
            std::size_t count = 0;
            for (const auto& [id, path] : items) {
                for (const auto& d : loaded.model.infer(imgproc::read_png(path), infer_thr)) {
                    json line = {{"image_id", id},
                                 {"class", names.empty() ? json(d.class_id) : json(names[d.class_id])},
                                 {"cx", d.box.cx}, {"cy", d.box.cy}, {"w", d.box.w}, {"h", d.box.h},
                                 {"score", d.score}};
                    out << line.dump() << "\n";
                    ++count;
                }
            }
            manifest->add_output("detections", jp);
            std::printf("%zu detections in %zu images -> %s\n", count, items.size(), jp.c_str());
        } else if (command == "saliency") {
            ensure_dir(out_dir);
            manifest.emplace(fs::path(out_dir) / "manifest.json", command, argv,
                             json{{"model", model_path}, {"data", data_dir}}, 0);
            auto loaded = detector::load_model(model_path);
            loaded.model.set_no_tsqi(false);
            const auto img = imgproc::read_png(data_dir);
            ag::NoGradGuard guard;
            const auto fo = loaded.model.forward(detector::image_tensor(img));
            const std::size_t h = fo.saliency.dim(0), w = fo.saliency.dim(1);
            const auto& hyb = fo.hybrid.data();
            std::vector<double> sal(fo.saliency.data().begin(), fo.saliency.data().end());
            std::vector<double> hy(hyb.begin(), hyb.end());
            const auto [mn, mx] = std::minmax_element(hy.begin(), hy.end());
            const double lo = *mn, span = *mx - *mn;
            for (auto& v : hy) v = span > 0 ? (v - lo) / span : 0.0;
            const fs::path sp = fs::path(out_dir) / "saliency.png", hp = fs::path(out_dir) / "hybrid.png";
            imgproc::write_png_gray(sp, h, w, sal);
            imgproc::write_png_gray(hp, h, w, hy);
            manifest->add_output("saliency", sp);
            manifest->add_output("hybrid", hp);
            std::printf("wrote %s and %s\n", sp.c_str(), hp.c_str());
        } else if (command == "ablate") {
            const fs::path root = data_dir;
            const fs::path train_split = resolve_split(root / "train", "train");
            const fs::path test_split = resolve_split(root / "test", "test");
            validate_train(data::load_coco(train_split / "annotations.json"), acfg);
            ensure_dir(out_dir);
            json cfg = detector::to_json(acfg);
            cfg["seeds"] = seeds;
            cfg["score_thr"] = score_thr;
            cfg["pretrain"] = pretrain_config_json(PretrainOptions{});
            manifest.emplace(fs::path(out_dir) / "manifest.json", command, argv, cfg, acfg.seed);

            std::map<std::string, std::array<std::vector<double>, 3>> scores;
            json per_seed = json::array();
            for (std::size_t s = 0; s < seeds; ++s) {
                const std::uint64_t run_seed = acfg.seed + s;
                const fs::path seed_dir = fs::path(out_dir) / ("seed_" + std::to_string(run_seed));
                PretrainOptions po;
                po.seed = run_seed;
                ensure_dir(seed_dir / "pretrain");
                RunManifest pm(seed_dir / "pretrain" / "manifest.json", "pretrain", argv, pretrain_config_json(po),
                               run_seed);
                json seed_rec = {{"seed", run_seed}};
                seed_rec["pretrain"] = run_pretrain(root, seed_dir / "pretrain", po, pm, false);
                pm.finish(true);
                std::fprintf(stderr, "[seed %llu] pretrain ratio %.3f\n", static_cast<unsigned long long>(run_seed),
                             seed_rec["pretrain"]["ratio"].get<double>());
                for (const auto& v : kVariants) {
                    detector::TrainConfig c = acfg;
                    c.seed = run_seed;
                    c.no_tsqi = v.no_tsqi;
                    c.no_ldlr = v.no_ldlr;
                    const fs::path vdir = seed_dir / v.key;
                    ensure_dir(vdir);
                    RunManifest vm(vdir / "manifest.json", "train", argv, detector::to_json(c), run_seed);
                    const auto ckpt = run_train(train_split, vdir, c, seed_dir / "pretrain" / "spb.ckpt", vm, false);
                    const auto r = run_eval(ckpt, test_split, score_thr);
                    vm.set_result("eval", eval::to_json(r.result, r.classes));
                    vm.finish(true);
                    scores[v.key][0].push_back(r.result.map);
                    scores[v.key][1].push_back(r.result.map50);
                    scores[v.key][2].push_back(r.result.map75);
                    seed_rec[v.key] = {{"map", r.result.map}, {"map50", r.result.map50}, {"map75", r.result.map75}};
                    std::fprintf(stderr, "[seed %llu] %-12s mAP %.3f  mAP50 %.3f  mAP75 %.3f\n",
                                 static_cast<unsigned long long>(run_seed), v.label, r.result.map, r.result.map50,
                                 r.result.map75);
                }
                per_seed.push_back(seed_rec);
            }

            json grid = json::object();
            std::printf("%-14s %-17s %-17s %-17s\n", "variant", "mAP", "mAP50", "mAP75");
            for (const auto& v : kVariants) {
                const auto& sc = scores[v.key];
                std::printf("%-14s", v.label);
                json row;
                const char* cols[] = {"map", "map50", "map75"};
                for (int m = 0; m < 3; ++m) {
                    char cell[32];
                    std::snprintf(cell, sizeof cell, "%.1f +/- %.1f", 100 * mean_of(sc[m]), 100 * std_of(sc[m]));
                    std::printf(" %-17s", cell);
                    row[cols[m]] = {{"mean", mean_of(sc[m])}, {"std", std_of(sc[m])}, {"values", sc[m]}};
                }
                std::printf("\n");
                grid[v.key] = row;
            }
            const json report = {{"grid", grid}, {"per_seed", per_seed}};
            const fs::path rp = fs::path(out_dir) / "ablation.json";
            std::ofstream(rp, std::ios::trunc) << report.dump(2) << "\n";
            manifest->add_output("report", rp);
            manifest->set_result("grid", grid);
        }
        if (manifest) manifest->finish(true);
        return 0;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        if (manifest) manifest->finish(false, e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        if (manifest) manifest->finish(false, e.what());
        return 1;
    }
}

}  // namespace caries::cli
