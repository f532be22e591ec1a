// JSON checkpoints holding the detector and transformer parameters with shape
// headers. Loading validates every shape against the stored configuration.
#pragma once

#include <optional>
#include <string>

#include "sctdet/detector.hpp"

namespace sctdet {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    DetectorModel model;
    std::optional<SctParams> sct;
    std::optional<SctConfig> sct_cfg;
};

void save_checkpoint(const std::string& path, const DetectorModel& model,
                     const SctParams* sct = nullptr, const SctConfig* sct_cfg = nullptr);

Checkpoint load_checkpoint(const std::string& path);

// Serialized bytes of a checkpoint (what save_checkpoint writes).
std::string checkpoint_bytes(const DetectorModel& model, const SctParams* sct = nullptr,
                             const SctConfig* sct_cfg = nullptr);

}  // namespace sctdet
