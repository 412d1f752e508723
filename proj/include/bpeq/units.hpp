#pragma once

#include <stdexcept>
#include <string>

namespace bpeq {

// All internal computation is SI: meters, seconds, vehicles per meter.
// Configs may quote speeds in km/h and densities in veh/km; these helpers
// convert at the boundary.

constexpr double kmh_to_ms(double kmh) { return kmh / 3.6; }
constexpr double ms_to_kmh(double ms) { return ms * 3.6; }
constexpr double veh_per_km_to_veh_per_m(double vpk) { return vpk / 1000.0; }
constexpr double veh_per_m_to_veh_per_km(double vpm) { return vpm * 1000.0; }

// Parses "60 km/h", "16.7 m/s" or a bare number (treated as m/s).
double parse_speed(const std::string& text);

// Parses "143 veh/km", "0.143 veh/m" or a bare number (treated as veh/m).
double parse_density(const std::string& text);

} // namespace bpeq
