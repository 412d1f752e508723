#include "bpeq/units.hpp"

#include <cctype>
#include <cstdlib>

namespace bpeq {

namespace {

// Splits "<number> <unit>" into value and unit tag (may be empty).
bool split_quantity(const std::string& text, double& value, std::string& unit) {
  const char* s = text.c_str();
  char* end = nullptr;
  value = std::strtod(s, &end);
  if (end == s) return false;
  while (*end != '\0' && std::isspace(static_cast<unsigned char>(*end))) ++end;
  unit.assign(end);
  while (!unit.empty() && std::isspace(static_cast<unsigned char>(unit.back()))) unit.pop_back();
  return true;
}

} // namespace

double parse_speed(const std::string& text) {
  double value = 0.0;
  std::string unit;
  if (!split_quantity(text, value, unit)) {
    throw std::invalid_argument("unparseable speed: '" + text + "'");
  }
  if (unit.empty() || unit == "m/s") return value;
  if (unit == "km/h" || unit == "kph") return kmh_to_ms(value);
  throw std::invalid_argument("unknown speed unit '" + unit + "' in '" + text + "'");
}

double parse_density(const std::string& text) {
  double value = 0.0;
  std::string unit;
  if (!split_quantity(text, value, unit)) {
    throw std::invalid_argument("unparseable density: '" + text + "'");
  }
  if (unit.empty() || unit == "veh/m") return value;
  if (unit == "veh/km") return veh_per_km_to_veh_per_m(value);
  throw std::invalid_argument("unknown density unit '" + unit + "' in '" + text + "'");
}

} // namespace bpeq
