#pragma once

// Text form of a PoseState for the command line:
//   "mean" or comma-separated key=value over az, el, ip (degrees), tx, ty,
//   scale and z0..z15. Omitted keys keep their mean-pose value.

#include <charconv>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

#include "pnav/csv.hpp"
#include "pnav/eval_metrics.hpp"
#include "pnav/generator.hpp"

namespace pnav {

class StateParseError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline PoseState parse_state(std::string_view text, const SamplingRanges& ranges = {}) {
    PoseState s = mean_pose(ranges);
    if (text == "mean" || text.empty()) return s;
    auto v = s.to_vector();  // az, el, ip, tx, ty, scale, z0..z15 (radians)
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find(',', pos), text.size());
        const std::string_view tok = text.substr(pos, end - pos);
        const auto eq = tok.find('=');
        if (eq == std::string_view::npos) throw StateParseError("state token '" + std::string(tok) + "' is not key=value");
        const std::string_view key = tok.substr(0, eq), val = tok.substr(eq + 1);
        double x = 0.0;
        const auto r = std::from_chars(val.data(), val.data() + val.size(), x);
        if (r.ec != std::errc() || r.ptr != val.data() + val.size() || !std::isfinite(x))
            throw StateParseError("bad value in state token '" + std::string(tok) + "'");
        if (key == "az") v[0] = rad(x);
        else if (key == "el") v[1] = rad(x);
        else if (key == "ip") v[2] = rad(x);
        else if (key == "tx") v[3] = x;
        else if (key == "ty") v[4] = x;
        else if (key == "scale") v[5] = x;
        else if (key.size() > 1 && key[0] == 'z') {
            std::size_t idx = 0;
            const auto ri = std::from_chars(key.data() + 1, key.data() + key.size(), idx);
            if (ri.ec != std::errc() || ri.ptr != key.data() + key.size() || idx >= kLatentDim)
                throw StateParseError("bad latent key '" + std::string(key) + "'");
            v[6 + idx] = x;
        } else {
            throw StateParseError("unknown state key '" + std::string(key) + "'");
        }
        pos = end + 1;
    }
    return PoseState::from_vector(v);
}

/// Inverse of parse_state (angles printed in degrees).
inline std::string format_state(const PoseState& s) {
    const auto v = s.to_vector();
    std::string out = "az=" + csv::number(deg(v[0])) + ",el=" + csv::number(deg(v[1])) + ",ip=" + csv::number(deg(v[2])) +
                      ",tx=" + csv::number(v[3]) + ",ty=" + csv::number(v[4]) + ",scale=" + csv::number(v[5]);
    for (std::size_t i = 0; i < kLatentDim; ++i)
        if (v[6 + i] != 0.0) out += ",z" + std::to_string(i) + "=" + csv::number(v[6 + i]);
    return out;
}

}  // namespace pnav
