#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "drag/metrics.hpp"
#include "drag/model.hpp"
#include "drag/synth_data.hpp"

namespace drag {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-7;  // decoupled, applied before the moment update, never to biases
};

class Adam {
 public:
  explicit Adam(const AdamConfig& config = {}) : config_(config) {}

  void add_params(const std::vector<Tensor>& params, const std::vector<bool>& is_bias, double lr);
  void zero_grad();
  void step();
  std::size_t steps() const { return step_count_; }

 private:
  struct Slot {
    Tensor param;
    double lr;
    bool decay;
    std::vector<double> m, v;
  };
  AdamConfig config_;
  std::vector<Slot> slots_;
  std::size_t step_count_ = 0;
};

// Binary cross-entropy on the private-class probability column, batch mean,
// eps = 1e-12 inside the logs.
Tensor cls_loss(const Tensor& probs, const std::vector<int>& labels);

struct StageSpec {
  enum class Objective {
    head_pretrain,       // backbone + pooled head on the labels
    cgl_pretrain,        // soft assignment vs the K-means clustering
    joint_alternating,   // odd mini-batches step cls, even step dis+div
    cls_only             // every mini-batch steps cls
  };
  std::string name;
  Objective objective = Objective::cls_only;
  std::vector<std::pair<std::string, double>> group_lrs;  // parameter group -> learning rate
  std::size_t epochs = 0;
};

struct StageSchedule {
  std::vector<StageSpec> stages;
};

struct TrainOptions {
  std::size_t batch_size = 32;
  double lr_cgl = 1e-3;
  double lr_gcn = 1e-3;
  double lr_backbone = 1e-5;
  double lr_pretrain = 1e-3;  // backbone trains from scratch here, not fine-tuned
  AdamConfig adam;
  std::uint64_t seed = 7;
  AblationMode mode = AblationMode::full;
  std::size_t epochs_pretrain_backbone = 10;
  std::size_t epochs_pretrain_cgl = 10;
  std::size_t epochs_cgl = 5;
  std::size_t epochs_gcn = 10;
  std::size_t epochs_gcn_backbone = 10;
  std::size_t epochs_cgl_again = 0;  // optional stage, never triggered automatically
  std::size_t epochs_finetune = 10;
};

// Stage order: pretrain backbone, pretrain CGL, optimize CGL, optimize GCN,
// optimize GCN + backbone, optionally CGL again, fine-tune backbone + GCN.
StageSchedule default_schedule(const TrainOptions& options);

struct EpochLog {
  std::string stage;
  std::size_t epoch = 0;
  double loss_cls, loss_dis, loss_div, loss_cgl;  // NaN when inactive in the stage
  double val_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  double best_val_accuracy = 0.0;
  bool selected_best = false;  // model restored to the best-validation checkpoint
  std::string last_stage;      // name of the last stage that actually ran
};

// Executes the schedule on the train split, evaluating on the val split each
// epoch. Keeps the parameter snapshot with the best validation accuracy across
// the post-pretraining stages and restores it before returning. Under
// AblationMode::frozen_cgl the CGL group is removed from every stage after its
// pretraining. Throws DivergenceError (naming stage and epoch) when a loss stops
// being finite.
TrainResult run_schedule(DragModel& model, const Dataset& data, const StageSchedule& schedule,
                         const TrainOptions& options);

// Thresholds the private probability at 0.5 and folds the split's confusion counts.
MetricsReport evaluate(const DragModel& model, const Dataset& data, Split split,
                       AblationMode mode, std::size_t batch_size = 32);

// CSV with header stage,epoch,loss_cls,loss_dis,loss_div,loss_cgl,val_accuracy.
void write_epoch_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

}  // namespace drag
