#pragma once

#include <map>
#include <span>
#include <utility>
#include <vector>

namespace mmsim {

enum class Phase { Encode, Prefill, Decode };

const char* to_string(Phase phase);

/// Factor grid for one (victim, aggressor) pair. Rows follow the victim's
/// intensity axis, columns the aggressor's; axes are strictly increasing.
struct InterferenceGrid {
    std::vector<double> victim_axis;
    std::vector<double> aggressor_axis;
    std::vector<std::vector<double>> factors;

    /// Bilinear interpolation, clamped to the grid edges.
    double at(double victim_intensity, double aggressor_intensity) const;
    bool operator==(const InterferenceGrid&) const = default;
};

struct Aggressor {
    Phase phase;
    double intensity;
};

/// Performance degradation factors between co-running phases. Intensity is
/// batch size for decode and tokens per iteration for encode and prefill.
class InterferenceTable {
public:
    void set(Phase victim, Phase aggressor, InterferenceGrid grid);
    const InterferenceGrid* grid(Phase victim, Phase aggressor) const;

    /// Product over aggressors of the interpolated factor; 1.0 for none and
    /// for aggressors of zero intensity or without a grid.
    double factor(Phase victim, double victim_intensity, std::span<const Aggressor> aggressors) const;
    double factor(Phase victim, double victim_intensity, Phase aggressor, double aggressor_intensity) const;

    /// Throws ConfigError: malformed axes, any factor < 1, or decode slowed
    /// less by prefill than by encode at a matched token count.
    void validate() const;

    /// All factors 1.0.
    static InterferenceTable none();
    /// Frozen single-GPU calibration.
    static InterferenceTable defaults();

    const std::map<std::pair<Phase, Phase>, InterferenceGrid>& grids() const { return grids_; }
    bool operator==(const InterferenceTable&) const = default;

private:
    std::map<std::pair<Phase, Phase>, InterferenceGrid> grids_;
};

/// Seconds of GPU time per phase on the whole GPU pool.
struct PhaseCostModel {
    double prefill_per_token = 1.0e-4;
    double encode_per_patch_token = 1.5e-5;
    double decode_base = 0.018;
    double decode_per_seq = 0.0005;

    double prefill(double tokens) const { return tokens * prefill_per_token; }
    double encode(double patch_tokens) const { return patch_tokens * encode_per_patch_token; }
    /// Zero for an empty batch.
    double decode(std::size_t batch) const {
        return batch == 0 ? 0.0 : decode_base + decode_per_seq * static_cast<double>(batch);
    }

    void validate() const;
    bool operator==(const PhaseCostModel&) const = default;
};

}  // namespace mmsim
