#include "mmsim/interference.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "mmsim/errors.hpp"

namespace mmsim {

const char* to_string(Phase phase) {
    switch (phase) {
        case Phase::Encode: return "encode";
        case Phase::Prefill: return "prefill";
        case Phase::Decode: return "decode";
    }
    return "unknown";
}

namespace {

/// Lower grid index and interpolation weight for x on a sorted axis.
std::pair<std::size_t, double> locate(const std::vector<double>& axis, double x) {
    if (axis.size() == 1 || x <= axis.front()) return {0, 0.0};
    if (x >= axis.back()) return {axis.size() - 2, 1.0};
    const auto hi = static_cast<std::size_t>(std::upper_bound(axis.begin(), axis.end(), x) - axis.begin());
    const std::size_t lo = hi - 1;
    return {lo, (x - axis[lo]) / (axis[hi] - axis[lo])};
}

}  // namespace

double InterferenceGrid::at(double v, double a) const {
    const auto [i, wi] = locate(victim_axis, v);
    const auto [j, wj] = locate(aggressor_axis, a);
    const std::size_t i1 = std::min(i + 1, victim_axis.size() - 1);
    const std::size_t j1 = std::min(j + 1, aggressor_axis.size() - 1);
    const double top = factors[i][j] * (1 - wj) + factors[i][j1] * wj;
    const double bottom = factors[i1][j] * (1 - wj) + factors[i1][j1] * wj;
    return top * (1 - wi) + bottom * wi;
}

void InterferenceTable::set(Phase victim, Phase aggressor, InterferenceGrid grid) {
    grids_[{victim, aggressor}] = std::move(grid);
}

const InterferenceGrid* InterferenceTable::grid(Phase victim, Phase aggressor) const {
    auto it = grids_.find({victim, aggressor});
    return it == grids_.end() ? nullptr : &it->second;
}

double InterferenceTable::factor(Phase victim, double victim_intensity, std::span<const Aggressor> aggressors) const {
    double f = 1.0;
    for (const auto& a : aggressors) f *= factor(victim, victim_intensity, a.phase, a.intensity);
    return f;
}

double InterferenceTable::factor(Phase victim, double victim_intensity, Phase aggressor,
                                 double aggressor_intensity) const {
    if (aggressor_intensity <= 0) return 1.0;
    const auto* g = grid(victim, aggressor);
    return g ? std::max(1.0, g->at(victim_intensity, aggressor_intensity)) : 1.0;
}

void InterferenceTable::validate() const {
    for (const auto& [key, g] : grids_) {
        const std::string path =
            std::string("interference.") + to_string(key.first) + "_by_" + to_string(key.second);
        auto check_axis = [&](const std::vector<double>& axis, const char* name) {
            if (axis.empty()) throw ConfigError(path + "." + name, "axis is empty");
            for (std::size_t i = 1; i < axis.size(); ++i) {
                if (!(axis[i] > axis[i - 1])) throw ConfigError(path + "." + name, "axis must increase strictly");
            }
        };
        check_axis(g.victim_axis, "victim_axis");
        check_axis(g.aggressor_axis, "aggressor_axis");
        if (g.factors.size() != g.victim_axis.size()) throw ConfigError(path + ".factors", "row count != victim axis");
        for (std::size_t i = 0; i < g.factors.size(); ++i) {
            if (g.factors[i].size() != g.aggressor_axis.size()) {
                throw ConfigError(path + ".factors[" + std::to_string(i) + "]", "column count != aggressor axis");
            }
            for (double f : g.factors[i]) {
                if (!(f >= 1.0)) throw ConfigError(path + ".factors[" + std::to_string(i) + "]", "factor < 1");
            }
        }
    }
    // Prefill is the heavier aggressor on decode at equal token counts.
    const auto* pre = grid(Phase::Decode, Phase::Prefill);
    const auto* enc = grid(Phase::Decode, Phase::Encode);
    if (pre && enc) {
        std::set<double> victims(pre->victim_axis.begin(), pre->victim_axis.end());
        victims.insert(enc->victim_axis.begin(), enc->victim_axis.end());
        std::set<double> tokens(pre->aggressor_axis.begin(), pre->aggressor_axis.end());
        tokens.insert(enc->aggressor_axis.begin(), enc->aggressor_axis.end());
        for (double v : victims) {
            for (double t : tokens) {
                if (factor(Phase::Decode, v, Phase::Prefill, t) + 1e-12 < factor(Phase::Decode, v, Phase::Encode, t)) {
                    throw ConfigError("interference.decode_by_prefill",
                                      "prefill must slow decode at least as much as encode at matched tokens");
                }
            }
        }
    }
}

InterferenceTable InterferenceTable::none() { return {}; }

InterferenceTable InterferenceTable::defaults() {
    InterferenceTable t;
    // Aggressor axes start at zero intensity with factor 1.
    const std::vector<double> batch{1, 32, 128};
    const std::vector<double> tokens{512, 2048, 10240};
    const std::vector<double> agg_tokens{0, 512, 2048, 10240};
    const std::vector<double> agg_batch{0, 1, 32, 128};
    t.set(Phase::Decode, Phase::Prefill,
          {batch, agg_tokens, {{1.0, 1.30, 1.80, 2.60}, {1.0, 1.25, 1.65, 2.30}, {1.0, 1.15, 1.45, 1.95}}});
    t.set(Phase::Decode, Phase::Encode,
          {batch, agg_tokens, {{1.0, 1.15, 1.40, 1.90}, {1.0, 1.12, 1.32, 1.75}, {1.0, 1.08, 1.25, 1.55}}});
    t.set(Phase::Prefill, Phase::Decode,
          {tokens, agg_batch, {{1.0, 1.02, 1.06, 1.12}, {1.0, 1.01, 1.04, 1.08}, {1.0, 1.01, 1.02, 1.05}}});
    t.set(Phase::Encode, Phase::Decode,
          {tokens, agg_batch, {{1.0, 1.03, 1.08, 1.15}, {1.0, 1.02, 1.05, 1.10}, {1.0, 1.01, 1.03, 1.06}}});
    return t;
}

void PhaseCostModel::validate() const {
    if (prefill_per_token < 0) throw ConfigError("phase_cost.prefill_per_token", "must be >= 0");
    if (encode_per_patch_token < 0) throw ConfigError("phase_cost.encode_per_patch_token", "must be >= 0");
    if (decode_base < 0) throw ConfigError("phase_cost.decode_base", "must be >= 0");
    if (decode_per_seq < 0) throw ConfigError("phase_cost.decode_per_seq", "must be >= 0");
}

}  // namespace mmsim
