// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: synth | train | render | relight | eval | gradcheck.

#include <rnda/eval/evaluate.hpp>
#include <rnda/eval/gradcheck.hpp>
#include <rnda/eval/png.hpp>
#include <rnda/io/pfm.hpp>
#include <rnda/synth/scene_io.hpp>
#include <rnda/train/config.hpp>
#include <rnda/train/pipeline.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace rnda;

namespace {

constexpr int kUsageError = 2;

struct Options {
    std::string config, data, out, probe, pose, model, pred, stage = "all", split = "all";
    std::optional<std::uint64_t> seed;
    std::size_t camera = 0, frame = 0, configurations = 50;
    bool quiet = false;
};

train::TrainConfig config_of(const Options &o) {
    train::TrainConfig c = o.config.empty() ? train::TrainConfig{} : train::load_config(o.config);
    if (o.seed) c.seed = *o.seed;
    c.validate();
    return c;
}

void write_text(const fs::path &path, const std::string &text) {
    std::ofstream out(path);
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

void write_image(const fs::path &stem, const ad::Tensor &img) {
    std::size_t h = img.dim(0), w = img.dim(1), c = img.rank() == 3 ? img.dim(2) : 1;
    io::FloatImage pfm{w, h, c, {}};
    pfm.data.assign(img.storage().begin(), img.storage().end());
    io::write_pfm(stem.string() + ".pfm", pfm);
    eval::write_png(stem.string() + ".png", img);
}

// ---------------------------------------------------------------- commands

int cmd_synth(const Options &o) {
    train::TrainConfig c = config_of(o);
    std::uint64_t seed = o.seed.value_or(1);
    synth::SceneDataset ds = synth::generate_sequence(seed, c.scene);
    synth::export_scene(ds, o.out);
    std::printf("wrote %zu frames to %s\nchecksum %016llx\n", ds.frames.size(), o.out.c_str(),
                static_cast<unsigned long long>(synth::directory_checksum(o.out)));
    return 0;
}

int cmd_train(const Options &o) {
    train::TrainConfig c = config_of(o);
    synth::SceneDataset ds = o.data.empty() ? synth::generate_sequence(c.seed, c.scene) : synth::import_scene(o.data);
    train::Stages stages = train::parse_stages(o.stage);
    std::optional<train::AvatarModel> resume;
    if (!o.model.empty()) resume = train::load_model(o.model).model;
    else if (stages == train::Stages::second) throw Error("--stage 2 needs --model with a stage-one checkpoint");

    fs::create_directories(o.out);
    std::ofstream curve(fs::path(o.out) / "loss.txt");
    curve.precision(17);
    auto progress = [&](int stage, std::size_t it, double loss) {
        curve << stage << ' ' << it << ' ' << loss << '\n';
        if (!o.quiet && (it + 1) % 100 == 0) std::fprintf(stderr, "stage %d iter %zu loss %.6f\n", stage, it + 1, loss);
    };
    train::TrainingRun run = train::run_training(ds, c, stages, std::move(resume), progress);
    train::save_model(fs::path(o.out) / "model.ckpt", run.model);
    write_text(fs::path(o.out) / "config.yaml", train::to_yaml(c) + "\n");
    for (const auto *log : {&run.stage1, &run.stage2})
        if (*log)
            std::printf("stage %d: %zu iterations, final loss %.6f, %zu skipped, %.1f s\n", log == &run.stage1 ? 1 : 2,
                        (*log)->loss.size(), (*log)->loss.back(), (*log)->skipped, (*log)->seconds);
    return 0;
}

struct RenderInputs {
    train::AvatarModel model;
    skinning::PoseSequence seq;
    raster::Camera camera;
};

RenderInputs render_inputs(const Options &o) {
    RenderInputs in{train::load_model(o.model).model, {}, {}};
    auto cams = synth::read_cameras(fs::path(o.data) / "cameras.txt");
    if (o.camera >= cams.size())
        throw Error("camera " + std::to_string(o.camera) + " out of range (" + std::to_string(cams.size()) + ")");
    in.camera = cams[o.camera];
    skinning::PoseTrack track = skinning::read_pose_file(o.pose.empty() ? fs::path(o.data) / "poses.txt" : fs::path(o.pose));
    if (o.frame >= track.size())
        throw Error("frame " + std::to_string(o.frame) + " out of range (" + std::to_string(track.size()) + ")");
    in.seq = skinning::window_at(track, o.frame, in.model.config.skinning.window);
    return in;
}

int cmd_render(const Options &o) {
    RenderInputs in = render_inputs(o);
    std::optional<sh::LightProbe> probe;
    if (!o.probe.empty()) probe = sh::load_probe(o.probe);
    bool pbr = !in.model.avatar.has_color();
    fs::create_directories(o.out);
    raster::RenderedImage rgb = train::render_image(in.model, in.seq, in.camera,
                                                    pbr ? render::ShadingMode::pbr : render::ShadingMode::sh_color,
                                                    probe ? &*probe : nullptr);
    write_image(fs::path(o.out) / "rgb", rgb.color);
    write_image(fs::path(o.out) / "alpha", rgb.alpha);
    write_image(fs::path(o.out) / "normal",
                train::render_image(in.model, in.seq, in.camera, render::ShadingMode::normal).color);
    if (in.model.completed_stage >= 2)
        write_image(fs::path(o.out) / "albedo",
                    train::render_image(in.model, in.seq, in.camera, render::ShadingMode::albedo).color);
    std::printf("rendered %s frame %zu camera %zu to %s\n", pbr ? "pbr" : "sh_color", o.frame, o.camera, o.out.c_str());
    return 0;
}

int cmd_relight(const Options &o) {
    RenderInputs in = render_inputs(o);
    if (in.model.avatar.has_color()) throw Error("relighting needs a model trained through stage two");
    sh::LightProbe probe = sh::load_probe(o.probe);
    raster::RenderedImage img = train::render_image(in.model, in.seq, in.camera, render::ShadingMode::pbr, &probe);
    fs::create_directories(o.out);
    write_image(fs::path(o.out) / "rgb", img.color);
    write_image(fs::path(o.out) / "alpha", img.alpha);
    std::printf("relit frame %zu camera %zu with %s\n", o.frame, o.camera, o.probe.c_str());
    return 0;
}

std::vector<synth::Split> splits_of(const std::string &s, bool with_relight) {
    if (s != "all") return {synth::parse_split(s)};
    std::vector<synth::Split> out{synth::Split::novel_view, synth::Split::novel_pose};
    if (with_relight) out.push_back(synth::Split::relight);
    return out;
}

// Scores a second dataset directory against the first, frame by frame.
eval::MetricReport compare_datasets(const synth::SceneDataset &gt, const synth::SceneDataset &pred, synth::Split split) {
    eval::MetricReport r(synth::to_string(split));
    objectives::FeatureExtractor phi;
    for (const synth::FrameRecord *f : gt.split(split)) {
        const synth::FrameRecord *p = nullptr;
        for (const auto &q : pred.frames)
            if (q.time == f->time && q.camera == f->camera && q.split == f->split) p = &q;
        if (!p) throw Error("prediction has no frame " + eval::frame_label(f->time, f->camera));
        eval::score_frame(r, eval::frame_label(f->time, f->camera), f->rgb, p->rgb, f->normal, p->normal, f->alpha,
                          p->alpha, phi);
    }
    return r;
}

int cmd_eval(const Options &o) {
    if (o.model.empty() == o.pred.empty()) throw Error("eval needs exactly one of --model or --pred");
    synth::SceneDataset ds = synth::import_scene(o.data);
    std::string text;
    if (!o.pred.empty()) {
        synth::SceneDataset pred = synth::import_scene(o.pred);
        for (synth::Split s : splits_of(o.split, true)) text += compare_datasets(ds, pred, s).to_text();
    } else {
        train::AvatarModel m = train::load_model(o.model).model;
        for (synth::Split s : splits_of(o.split, m.completed_stage >= 2)) text += eval::evaluate(m, ds, s).to_text();
    }
    if (o.out.empty()) {
        std::fputs(text.c_str(), stdout);
    } else {
        fs::create_directories(o.out);
        write_text(fs::path(o.out) / "report.txt", text);
        std::printf("wrote %s\n", (fs::path(o.out) / "report.txt").c_str());
    }
    return 0;
}

int cmd_gradcheck(const Options &o) {
    constexpr double kTolerance = 1e-4;
    bool ok = true;
    for (const auto &r : eval::run_gradient_suite(o.configurations)) {
        bool pass = r.max_error <= kTolerance;
        ok = ok && pass;
        std::printf("%-24s configs %3zu  max_rel_error %.3e  %6.1f s  %s\n", r.path.c_str(), r.configurations,
                    r.max_error, r.seconds, pass ? "ok" : "FAIL");
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"rnda: relightable Gaussian avatars with dynamic skinning"};
    app.require_subcommand(1);
    Options o;

    auto seed = [&](CLI::App *c) {
        c->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t &s) { o.seed = s; }, "random seed");
    };
    auto config = [&](CLI::App *c) {
        c->add_option("--config", o.config, "YAML config file")->check(CLI::ExistingFile);
    };

    CLI::App *synth = app.add_subcommand("synth", "generate a synthetic dataset");
    seed(synth);
    config(synth);
    synth->add_option("--out", o.out, "output directory")->required();

    CLI::App *train = app.add_subcommand("train", "train stage one and/or two");
    seed(train);
    config(train);
    train->add_option("--data", o.data, "dataset directory (synthesized from the config when absent)")
        ->check(CLI::ExistingDirectory);
    train->add_option("--out", o.out, "output directory")->required();
    train->add_option("--stage", o.stage, "1, 2 or all")->check(CLI::IsMember({"1", "2", "all"}));
    train->add_option("--model", o.model, "checkpoint to continue from")->check(CLI::ExistingFile);
    train->add_flag("--quiet", o.quiet, "no progress output");

    auto view_options = [&](CLI::App *c) {
        c->add_option("--model", o.model, "model checkpoint")->required()->check(CLI::ExistingFile);
        c->add_option("--data", o.data, "dataset directory providing cameras.txt and poses.txt")
            ->required()
            ->check(CLI::ExistingDirectory);
        c->add_option("--pose", o.pose, "pose file (defaults to the dataset's)")->check(CLI::ExistingFile);
        c->add_option("--camera", o.camera, "camera index");
        c->add_option("--frame", o.frame, "frame of the pose file");
        c->add_option("--out", o.out, "output directory")->required();
    };
    CLI::App *render = app.add_subcommand("render", "render rgb, normal and albedo images");
    view_options(render);
    render->add_option("--probe", o.probe, "light probe PFM (defaults to the learned one)")->check(CLI::ExistingFile);
    CLI::App *relight = app.add_subcommand("relight", "render under another light probe");
    view_options(relight);
    relight->add_option("--probe", o.probe, "light probe PFM")->required()->check(CLI::ExistingFile);

    CLI::App *ev = app.add_subcommand("eval", "write a metric report");
    ev->add_option("--data", o.data, "ground-truth dataset")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--model", o.model, "model checkpoint to evaluate")->check(CLI::ExistingFile);
    ev->add_option("--pred", o.pred, "dataset directory to score instead of a model")->check(CLI::ExistingDirectory);
    ev->add_option("--split", o.split, "novel_view, novel_pose, relight, train or all");
    ev->add_option("--out", o.out, "output directory (stdout when absent)");

    CLI::App *gc = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
    gc->add_option("--configs", o.configurations, "random configurations per path")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return kUsageError;
    }
    try {
        if (*synth) return cmd_synth(o);
        if (*train) return cmd_train(o);
        if (*render) return cmd_render(o);
        if (*relight) return cmd_relight(o);
        if (*ev) return cmd_eval(o);
        return cmd_gradcheck(o);
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
