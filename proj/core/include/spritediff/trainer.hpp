#pragma once

#include <functional>
#include <string>
#include <vector>

#include "spritediff/model.hpp"
#include "spritediff/optim.hpp"
#include "spritediff/pipeline.hpp"
#include "spritediff/sprites.hpp"

namespace spritediff {

enum class Stage { Base, SePretrain, Finetune };

std::string stage_name(Stage s);
Stage stage_from_name(const std::string& name);

struct TrainConfig {
    Stage stage = Stage::Base;
    double lr_main = 0.0;  // 0 picks the stage default
    double lr_token = 5e-3;
    int batch = 0;  // 0 picks the stage default
    int steps = 0;
    uint64_t seed = 0;
    bool layout_channel = true;        // SE pretraining layout decoupling
    bool use_subject_encoder = true;   // fine-tuning ablation toggle
    int log_every = 25;

    static TrainConfig defaults(Stage stage);
    TrainConfig resolved() const;  // fills zeros with stage defaults
    void validate() const;
};

struct TrainLogEntry {
    int step;
    std::string stage;
    double loss;
    double lr;
};
using TrainLogger = std::function<void(const TrainLogEntry&)>;

struct RegularSet {
    std::vector<Tensor> images;  // [3,32,32] each
    std::vector<Caption> captions;
};

// Optimizer bound to the stage's trainable subset; param_names align with
// the Adam slots for serialization.
struct StageOptimizer {
    Adam adam;
    std::vector<std::string> param_names;
};

// Sets requires_grad over the whole model (trainables on, frozen off) and
// builds the optimizer groups for the stage.
StageOptimizer make_stage_optimizer(Model& model, const TrainConfig& cfg);

// Single training steps, fully determined by (cfg.seed, step). The split
// into make/step/run keeps checkpoint-resumed runs bit-identical.
double train_step_base(Model& model, const std::vector<SpriteSample>& data,
                       const TrainConfig& cfg, StageOptimizer& opt, int step);
double train_step_se(Model& model, const std::vector<SpriteSample>& data, const TrainConfig& cfg,
                     StageOptimizer& opt, int step);
double train_step_finetune(Model& model, const RefBundle& ref, const RegularSet& regulars,
                           const TrainConfig& cfg, StageOptimizer& opt, int step);

void run_training(Model& model, const std::vector<SpriteSample>& data, const RefBundle* ref,
                  const RegularSet* regulars, const TrainConfig& cfg, StageOptimizer& opt,
                  int start_step, const TrainLogger& log = {});

// Stage entry points.
Model pretrain_base(const DenoiserConfig& dcfg, const EncoderConfig& ecfg,
                    const NoiseSchedule& sched, const std::vector<SpriteSample>& data,
                    const TrainConfig& cfg, const TrainLogger& log = {});
void pretrain_subject_encoder(Model& model, const std::vector<SpriteSample>& data,
                              const TrainConfig& cfg, const TrainLogger& log = {});

struct RegularGenSpec {
    int n = 32;
    uint64_t seed = 0;
    double beta = 0.2;
    double omega_ref = 2.5;
    GuidanceConfig guidance;
    bool ancestral = true;  // diversity for the regular set
    int ddim_steps = 25;    // used when !ancestral
};
RegularSet generate_regular_set(const Model& model, const RefBundle& ref,
                                const RegularGenSpec& spec);

void finetune_subject(Model& model, const RefBundle& ref, const RegularSet& regulars,
                      const TrainConfig& cfg, const TrainLogger& log = {});

}  // namespace spritediff
