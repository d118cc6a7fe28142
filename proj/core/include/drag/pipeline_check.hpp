#pragma once

#include "drag/grad_check.hpp"
#include "drag/model.hpp"

namespace drag {

// Finite-difference check of the whole forward path (backbone through classifier
// plus the region losses) against the reverse-mode gradients, on random images.
// Region peaks and diversity argmax branches are frozen from the unperturbed
// parameters, matching their detached/subgradient semantics. Returns the worst
// relative error across every parameter entry.
GradCheckReport check_pipeline_gradients(const ModelConfig& config, std::size_t batch,
                                         std::uint64_t seed, double eps = 1e-4);

// Config used by the `grad-check` command and the acceptance suite: 16x16 input,
// three 8-channel stages (4x4 feature map), 4 regions.
ModelConfig grad_check_model_config();

}  // namespace drag
