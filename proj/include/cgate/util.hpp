#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cgate {

using Json = nlohmann::json;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string file_sha256_hex(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::uint64_t fnv1a64(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Reals that may be +/-inf or undefined. JSON has no such literals, so
// infinities become the strings "+inf"/"-inf" and NaN becomes null.
Json real_to_json(double value);
double real_from_json(const Json& value);

double sigmoid(double x);
double logit(double p);

// Area under the ROC curve with midrank handling of ties.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

}  // namespace cgate
