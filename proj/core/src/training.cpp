#include "drag/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "drag/rng.hpp"

namespace drag {

void Adam::add_params(const std::vector<Tensor>& params, const std::vector<bool>& is_bias,
                      double lr) {
  if (params.size() != is_bias.size()) {
    throw ContractError("Adam::add_params: parameter and bias-flag counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Slot slot;
    slot.param = params[i];
    slot.lr = lr;
    slot.decay = !is_bias[i];
    slot.m.assign(params[i].numel(), 0.0);
    slot.v.assign(params[i].numel(), 0.0);
    slots_.push_back(std::move(slot));
  }
}

void Adam::zero_grad() {
  for (auto& slot : slots_) slot.param.zero_grad();
}

void Adam::step() {
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (auto& slot : slots_) {
    auto& theta = slot.param.values_mut();
    const auto& g = slot.param.grad();
    if (g.size() != theta.size()) {
      throw ContractError("Adam::step: gradient shape does not match parameter");
    }
    const double wd = slot.decay ? config_.weight_decay : 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (wd != 0.0) theta[i] -= slot.lr * wd * theta[i];
      slot.m[i] = config_.beta1 * slot.m[i] + (1.0 - config_.beta1) * g[i];
      slot.v[i] = config_.beta2 * slot.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      theta[i] -= slot.lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

Tensor cls_loss(const Tensor& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2 || probs.extent(1) != 2) {
    throw DimensionError("cls_loss: expected probabilities [B,2], got " + shape_str(probs.shape()));
  }
  const std::size_t b = probs.extent(0);
  if (labels.size() != b) {
    throw DimensionError("cls_loss: have " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(b));
  }
  constexpr double kEps = 1e-12;
  std::vector<double> y(b), inv_y(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw ContractError("cls_loss: label outside {0,1}");
    }
    y[i] = static_cast<double>(labels[i]);
    inv_y[i] = 1.0 - y[i];
  }
  Tensor p_private = reshape(narrow(probs, 1, 1, 1), {b});
  Tensor hit = mul(Tensor::from({b}, std::move(y)), log(add(p_private, kEps)));
  Tensor miss = mul(Tensor::from({b}, std::move(inv_y)), log(add(sub(1.0, p_private), kEps)));
  return scale(sum_all(add(hit, miss)), -1.0 / static_cast<double>(b));
}

StageSchedule default_schedule(const TrainOptions& o) {
  using Obj = StageSpec::Objective;
  StageSchedule s;
  s.stages.push_back({"pretrain_backbone",
                      Obj::head_pretrain,
                      {{"backbone", o.lr_pretrain}, {"head", o.lr_pretrain}},
                      o.epochs_pretrain_backbone});
  s.stages.push_back({"pretrain_cgl", Obj::cgl_pretrain, {{"cgl", o.lr_cgl}}, o.epochs_pretrain_cgl});
  s.stages.push_back({"optimize_cgl", Obj::joint_alternating, {{"cgl", o.lr_cgl}}, o.epochs_cgl});
  s.stages.push_back({"optimize_gcn", Obj::cls_only, {{"gcn", o.lr_gcn}}, o.epochs_gcn});
  s.stages.push_back({"optimize_gcn_backbone",
                      Obj::joint_alternating,
                      {{"gcn", o.lr_gcn}, {"backbone", o.lr_backbone}},
                      o.epochs_gcn_backbone});
  s.stages.push_back(
      {"optimize_cgl_again", Obj::joint_alternating, {{"cgl", o.lr_cgl}}, o.epochs_cgl_again});
  s.stages.push_back({"finetune_backbone_gcn",
                      Obj::joint_alternating,
                      {{"gcn", o.lr_gcn}, {"backbone", o.lr_backbone}},
                      o.epochs_finetune});
  return s;
}

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct SplitData {
  std::vector<std::size_t> indices;
  Tensor features;   // [n,C,H,W] cache, defined only while the backbone is frozen
  bool cached = false;
};

Tensor gather_rows(const Tensor& source, const std::vector<std::size_t>& rows) {
  const std::size_t stride = source.numel() / source.extent(0);
  std::vector<double> out(rows.size() * stride);
  const double* src = source.values().data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(src + rows[i] * stride, src + (rows[i] + 1) * stride, out.begin() + i * stride);
  }
  Shape shape = source.shape();
  shape[0] = rows.size();
  return Tensor::from(shape, std::move(out));
}

// Forward over a whole index list without gradients, in fixed-size batches.
Tensor compute_features(const DragModel& model, const Dataset& data,
                        const std::vector<std::size_t>& indices, std::size_t batch_size) {
  NoGradGuard guard;
  const std::size_t c = model.config.channels();
  const std::size_t side = model.config.side();
  std::vector<double> out(indices.size() * c * side * side);
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, indices.size() - start);
    std::vector<std::size_t> chunk(indices.begin() + start, indices.begin() + start + count);
    Tensor fb = backbone_forward(data.gather_images(chunk), model.backbone,
                                 model.config.backbone);
    std::copy(fb.values().begin(), fb.values().end(),
              out.begin() + start * c * side * side);
  }
  return Tensor::from({indices.size(), c, side, side}, std::move(out));
}

ConfusionCounts confusion_from_probs(const Tensor& probs, const std::vector<int>& labels) {
  ConfusionCounts counts;
  const std::size_t b = probs.extent(0);
  for (std::size_t i = 0; i < b; ++i) {
    const bool predicted_private = probs.values()[i * 2 + 1] >= 0.5;
    if (labels[i] == 1) {
      predicted_private ? ++counts.tp : ++counts.fn;
    } else {
      predicted_private ? ++counts.fp : ++counts.tn;
    }
  }
  return counts;
}

double head_accuracy(const DragModel& model, const Dataset& data,
                     const std::vector<std::size_t>& indices, std::size_t batch_size) {
  NoGradGuard guard;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, indices.size() - start);
    std::vector<std::size_t> chunk(indices.begin() + start, indices.begin() + start + count);
    Tensor probs = model.pretrain_probs(data.gather_images(chunk));
    const auto labels = data.gather_labels(chunk);
    for (std::size_t i = 0; i < count; ++i) {
      const bool pred = probs.values()[i * 2 + 1] >= 0.5;
      if (pred == (labels[i] == 1)) ++correct;
    }
  }
  return indices.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(indices.size());
}

struct ParamSnapshot {
  std::vector<std::vector<double>> values;

  static ParamSnapshot take(const DragModel& model) {
    ParamSnapshot snap;
    for (const auto& [name, tensor] : model.named_parameters()) {
      snap.values.push_back(tensor.values());
    }
    return snap;
  }
  void restore(DragModel& model) const {
    auto named = model.named_parameters();
    for (std::size_t i = 0; i < named.size(); ++i) {
      named[i].second.values_mut() = values[i];
    }
  }
};

}  // namespace

TrainResult run_schedule(DragModel& model, const Dataset& data, const StageSchedule& schedule,
                         const TrainOptions& options) {
  using Obj = StageSpec::Objective;
  TrainResult result;
  Rng shuffle_root = Rng(options.seed).child(77);

  SplitData train{data.indices_of(Split::train), {}, false};
  if (train.indices.empty()) throw ContractError("run_schedule: empty train split");

  const auto groups = model.parameter_groups();
  auto find_group = [&](const std::string& name) -> const DragModel::Group& {
    for (const auto& g : groups) {
      if (g.name == name) return g;
    }
    throw ContractError("run_schedule: unknown parameter group '" + name + "'");
  };
  std::vector<Tensor> all_params;
  for (const auto& g : groups) {
    all_params.insert(all_params.end(), g.params.begin(), g.params.end());
  }

  ParamSnapshot best;
  double best_val = -1.0;
  bool tracking_best = false;

  for (std::size_t stage_idx = 0; stage_idx < schedule.stages.size(); ++stage_idx) {
    StageSpec stage = schedule.stages[stage_idx];
    if (options.mode == AblationMode::frozen_cgl && stage.objective != Obj::cgl_pretrain) {
      std::erase_if(stage.group_lrs, [](const auto& g) { return g.first == "cgl"; });
    }
    if (stage.epochs == 0 || stage.group_lrs.empty()) continue;
    result.last_stage = stage.name;

    if (stage.objective == Obj::cgl_pretrain && model.cluster.empty()) {
      SignatureBuilder builder;
      {
        NoGradGuard guard;
        for (std::size_t start = 0; start < train.indices.size(); start += options.batch_size) {
          const std::size_t count =
              std::min(options.batch_size, train.indices.size() - start);
          std::vector<std::size_t> chunk(train.indices.begin() + start,
                                         train.indices.begin() + start + count);
          builder.add(backbone_forward(data.gather_images(chunk), model.backbone,
                                       model.config.backbone));
        }
      }
      model.cluster =
          cluster_channels(builder.finish(), model.config.n_regions, options.seed);
    }

    const bool backbone_trains =
        std::any_of(stage.group_lrs.begin(), stage.group_lrs.end(),
                    [](const auto& g) { return g.first == "backbone"; });
    const bool needs_features = stage.objective != Obj::head_pretrain;
    if (needs_features && !backbone_trains && !train.cached) {
      train.features = compute_features(model, data, train.indices, options.batch_size);
      train.cached = true;
    }
    if (backbone_trains) train.cached = false;

    Adam optimizer(options.adam);
    for (const auto& [group_name, lr] : stage.group_lrs) {
      const auto& g = find_group(group_name);
      optimizer.add_params(g.params, g.is_bias, lr);
    }

    for (std::size_t epoch = 0; epoch < stage.epochs; ++epoch) {
      Rng order_rng = shuffle_root.child(stage_idx * 1000 + epoch);
      std::vector<std::size_t> order(train.indices.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      order_rng.shuffle(order);

      double sum_cls = 0.0, sum_dis = 0.0, sum_div = 0.0, sum_cgl = 0.0;
      std::size_t n_cls = 0, n_disdiv = 0, n_cgl = 0;

      for (std::size_t start = 0, batch_idx = 0; start < order.size();
           start += options.batch_size, ++batch_idx) {
        const std::size_t count = std::min(options.batch_size, order.size() - start);
        std::vector<std::size_t> rows(order.begin() + start, order.begin() + start + count);
        std::vector<std::size_t> dataset_rows(count);
        for (std::size_t i = 0; i < count; ++i) dataset_rows[i] = train.indices[rows[i]];
        const auto labels = data.gather_labels(dataset_rows);

        zero_grad(all_params);
        Tensor loss;
        double dis_value = kNan, div_value = kNan;
        if (stage.objective == Obj::head_pretrain) {
          loss = cls_loss(model.pretrain_probs(data.gather_images(dataset_rows)), labels);
          sum_cls += loss.item();
          ++n_cls;
        } else {
          Tensor fb = train.cached
                          ? gather_rows(train.features, rows)
                          : backbone_forward(data.gather_images(dataset_rows), model.backbone,
                                             model.config.backbone);
          if (stage.objective == Obj::cgl_pretrain) {
            loss = cgl_pretrain_loss(cgl_forward(fb, model.cgl), model.cluster);
            sum_cgl += loss.item();
            ++n_cgl;
          } else if (stage.objective == Obj::cls_only || batch_idx % 2 == 0) {
            loss = cls_loss(model.forward_from_features(fb, options.mode).probs, labels);
            sum_cls += loss.item();
            ++n_cls;
          } else {
            Tensor fw = region_features(fb, cgl_forward(fb, model.cgl));
            Tensor dis = dis_loss(fw);
            Tensor div = div_loss(fw);
            dis_value = dis.item();
            div_value = div.item();
            loss = add(dis, div);
            sum_dis += dis_value;
            sum_div += div_value;
            ++n_disdiv;
          }
        }
        if (!std::isfinite(loss.item())) {
          throw DivergenceError("run_schedule: non-finite loss in stage '" + stage.name +
                                "' epoch " + std::to_string(epoch));
        }
        backward(loss);
        optimizer.step();
      }

      EpochLog row;
      row.stage = stage.name;
      row.epoch = epoch;
      row.loss_cls = n_cls ? sum_cls / static_cast<double>(n_cls) : kNan;
      row.loss_dis = n_disdiv ? sum_dis / static_cast<double>(n_disdiv) : kNan;
      row.loss_div = n_disdiv ? sum_div / static_cast<double>(n_disdiv) : kNan;
      row.loss_cgl = n_cgl ? sum_cgl / static_cast<double>(n_cgl) : kNan;

      if (stage.objective == Obj::head_pretrain) {
        row.val_accuracy =
            head_accuracy(model, data, data.indices_of(Split::val), options.batch_size);
      } else {
        row.val_accuracy =
            evaluate(model, data, Split::val, options.mode, options.batch_size).accuracy;
        const bool selection_stage =
            stage.objective == Obj::joint_alternating || stage.objective == Obj::cls_only;
        if (selection_stage && row.val_accuracy > best_val) {
          best_val = row.val_accuracy;
          best = ParamSnapshot::take(model);
          tracking_best = true;
        }
      }
      result.log.push_back(std::move(row));
    }
  }

  if (tracking_best) {
    best.restore(model);
    result.best_val_accuracy = best_val;
    result.selected_best = true;
  }
  return result;
}

MetricsReport evaluate(const DragModel& model, const Dataset& data, Split split,
                       AblationMode mode, std::size_t batch_size) {
  NoGradGuard guard;
  const auto indices = data.indices_of(split);
  if (indices.empty()) throw ContractError("evaluate: empty split " + to_string(split));
  ConfusionCounts counts;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, indices.size() - start);
    std::vector<std::size_t> chunk(indices.begin() + start, indices.begin() + start + count);
    const auto out = model.forward(data.gather_images(chunk), mode);
    counts += confusion_from_probs(out.probs, data.gather_labels(chunk));
  }
  return metrics_from_confusion(counts);
}

void write_epoch_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw FormatError("write_epoch_log: cannot open " + path.string());
  out << "stage,epoch,loss_cls,loss_dis,loss_div,loss_cgl,val_accuracy\n";
  char buf[256];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%.12g,%.12g,%.12g,%.12g,%.12g\n", row.stage.c_str(),
                  row.epoch, row.loss_cls, row.loss_dis, row.loss_div, row.loss_cgl,
                  row.val_accuracy);
    out << buf;
  }
}

}  // namespace drag
