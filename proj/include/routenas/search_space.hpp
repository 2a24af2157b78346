#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "routenas/random.hpp"

namespace routenas {

/// NetCount searches the encoder only; Hotspot adds the decoder and shortcut options.
enum class Task { NetCount, Hotspot };

std::string_view to_string(Task task);
Task task_from_string(std::string_view s);

/// Number of binary options: 12 for NetCount, 24 for Hotspot.
int genome_length(Task task);

struct Genome {
  Task task = Task::NetCount;
  std::vector<std::uint8_t> bits;

  Genome() = default;
  Genome(Task t, std::vector<std::uint8_t> b);

  static Genome zeros(Task t);
  static Genome ones(Task t);
  /// Parses a '0'/'1' string; its length selects the task.
  static Genome parse(std::string_view text);
  static Genome parse(std::string_view text, Task task);

  std::string str() const;
  std::size_t size() const { return bits.size(); }

  friend bool operator==(const Genome&, const Genome&) = default;
  friend auto operator<=>(const Genome& a, const Genome& b) {
    if (auto c = static_cast<int>(a.task) <=> static_cast<int>(b.task); c != 0) return c;
    return a.bits <=> b.bits;
  }
};

struct ConvBlockSpec {
  int kernel = 3;
  int n_blocks = 2;
  int n_filters = 32;

  friend bool operator==(const ConvBlockSpec&, const ConvBlockSpec&) = default;
};

struct TransBlockSpec {
  int kernel = 3;
  int n_blocks = 1;
  int n_filters = 32;

  friend bool operator==(const TransBlockSpec&, const TransBlockSpec&) = default;
};

/// Fixed downsampling convolution in front of CONV1.
struct StemSpec {
  int kernel = 3;
  int stride = 2;
  int n_filters = 32;

  friend bool operator==(const StemSpec&, const StemSpec&) = default;
};

/// NetCount: global mean pool + linear to one scalar. Hotspot: stride-2 transposed conv to one channel.
struct HeadSpec {
  int kernel = 3;

  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

struct ArchitectureSpec {
  Task task = Task::NetCount;
  StemSpec stem;
  std::array<ConvBlockSpec, 4> conv;
  std::vector<TransBlockSpec> trans;  // 3 entries for Hotspot, empty for NetCount
  std::vector<bool> shortcuts;        // S1 (CONV3 -> TransCONV1), S2 (CONV2 -> TransCONV2), S3 (CONV1 -> TransCONV3)
  HeadSpec head;

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

/// The two per-stage choices of the search space (bit 0 selects the first).
struct StageOptions {
  std::array<int, 2> kernel;
  std::array<int, 2> n_blocks;
  std::array<int, 2> n_filters;
};

inline constexpr std::array<StageOptions, 4> kConvOptions = {{
    {{3, 5}, {2, 3}, {32, 48}},
    {{3, 5}, {2, 3}, {48, 64}},
    {{3, 5}, {2, 3}, {96, 128}},
    {{3, 5}, {2, 3}, {192, 256}},
}};

inline constexpr std::array<StageOptions, 3> kTransOptions = {{
    {{3, 5}, {1, 2}, {128, 160}},
    {{3, 5}, {1, 2}, {96, 128}},
    {{3, 5}, {1, 2}, {32, 64}},
}};

ArchitectureSpec decode(const Genome& genome);
Genome encode(const ArchitectureSpec& spec);

/// 2^n.
std::uint64_t space_size(Task task);

Genome random_genome(Task task, Rng& rng);
Genome random_genome(Task task, std::uint64_t seed);

/// Hand-designed reference networks: ResNet-18 encoder, plus three transposed-conv stages for Hotspot.
ArchitectureSpec resnet18_spec(Task task);

nlohmann::json spec_to_json(const ArchitectureSpec& spec);
ArchitectureSpec spec_from_json(const nlohmann::json& doc);

}  // namespace routenas
