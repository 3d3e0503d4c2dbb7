// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/train/trainer.hpp>

#include <optional>
#include <string>

namespace rnda::train {

enum class Stages { first, second, all };

inline Stages parse_stages(const std::string &s) {
    if (s == "1") return Stages::first;
    if (s == "2") return Stages::second;
    if (s == "all") return Stages::all;
    throw Error("stage must be 1, 2 or all, got '" + s + "'");
}

struct TrainingRun {
    AvatarModel model;
    std::optional<TrainLog> stage1, stage2;
};

/// Builds a model from the dataset's figure (or continues `resume`) and
/// runs the requested stages.
inline TrainingRun run_training(const synth::SceneDataset &ds, const TrainConfig &cfg, Stages stages,
                                std::optional<AvatarModel> resume = std::nullopt, const Progress &progress = {}) {
    cfg.validate();
    TrainingRun run{resume ? std::move(*resume) : make_model(template_of(ds.figure), cfg.model, cfg.seed), {}, {}};
    if (stages != Stages::second) run.stage1 = train_stage1(ds, run.model, cfg, progress);
    if (stages != Stages::first) run.stage2 = train_stage2(ds, run.model, cfg, progress);
    return run;
}

} // namespace rnda::train
