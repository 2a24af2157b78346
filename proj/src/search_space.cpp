#include "routenas/search_space.hpp"

#include <algorithm>

#include "routenas/errors.hpp"

namespace routenas {

std::string_view to_string(Task task) { return task == Task::NetCount ? "netcount" : "hotspot"; }

Task task_from_string(std::string_view s) {
  if (s == "netcount") return Task::NetCount;
  if (s == "hotspot") return Task::Hotspot;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected netcount or hotspot)");
}

int genome_length(Task task) { return task == Task::NetCount ? 12 : 24; }

Genome::Genome(Task t, std::vector<std::uint8_t> b) : task(t), bits(std::move(b)) {
  if (bits.size() != static_cast<std::size_t>(genome_length(task)))
    throw LengthMismatch("genome of length " + std::to_string(bits.size()) + " does not match task " +
                         std::string(to_string(task)));
  for (auto v : bits)
    if (v > 1) throw IllegalValue("genome bits must be 0 or 1");
}

Genome Genome::zeros(Task t) { return {t, std::vector<std::uint8_t>(static_cast<std::size_t>(genome_length(t)), 0)}; }
Genome Genome::ones(Task t) { return {t, std::vector<std::uint8_t>(static_cast<std::size_t>(genome_length(t)), 1)}; }

Genome Genome::parse(std::string_view text) {
  if (text.size() == 12) return parse(text, Task::NetCount);
  if (text.size() == 24) return parse(text, Task::Hotspot);
  throw LengthMismatch("genome string must have 12 or 24 characters, got " + std::to_string(text.size()));
}

Genome Genome::parse(std::string_view text, Task task) {
  std::vector<std::uint8_t> bits;
  bits.reserve(text.size());
  for (char c : text) {
    if (c != '0' && c != '1') throw IllegalValue("genome string may only contain '0' and '1'");
    bits.push_back(static_cast<std::uint8_t>(c - '0'));
  }
  return {task, std::move(bits)};
}

std::string Genome::str() const {
  std::string s;
  s.reserve(bits.size());
  for (auto b : bits) s.push_back(static_cast<char>('0' + b));
  return s;
}

ArchitectureSpec decode(const Genome& genome) {
  if (genome.bits.size() != static_cast<std::size_t>(genome_length(genome.task)))
    throw LengthMismatch("genome length does not match its task");
  const auto& b = genome.bits;
  ArchitectureSpec spec;
  spec.task = genome.task;
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& o = kConvOptions[s];
    spec.conv[s] = {o.kernel[b[3 * s]], o.n_blocks[b[3 * s + 1]], o.n_filters[b[3 * s + 2]]};
  }
  if (genome.task == Task::Hotspot) {
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& o = kTransOptions[s];
      const std::size_t base = 12 + 3 * s;
      spec.trans.push_back({o.kernel[b[base]], o.n_blocks[b[base + 1]], o.n_filters[b[base + 2]]});
    }
    for (std::size_t s = 0; s < 3; ++s) spec.shortcuts.push_back(b[21 + s] != 0);
  }
  return spec;
}

namespace {

std::uint8_t option_bit(const std::array<int, 2>& options, int value, const char* what, const std::string& stage) {
  for (std::uint8_t k = 0; k < 2; ++k)
    if (options[k] == value) return k;
  throw IllegalValue(std::string(what) + " " + std::to_string(value) + " is not an option of " + stage);
}

}  // namespace

Genome encode(const ArchitectureSpec& spec) {
  if (spec.stem != StemSpec{} || spec.head != HeadSpec{}) throw IllegalValue("stem and head are not searchable");
  std::vector<std::uint8_t> bits;
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& o = kConvOptions[s];
    const auto stage = "CONV" + std::to_string(s + 1);
    bits.push_back(option_bit(o.kernel, spec.conv[s].kernel, "kernel", stage));
    bits.push_back(option_bit(o.n_blocks, spec.conv[s].n_blocks, "block count", stage));
    bits.push_back(option_bit(o.n_filters, spec.conv[s].n_filters, "filter count", stage));
  }
  if (spec.task == Task::NetCount) {
    if (!spec.trans.empty() || !spec.shortcuts.empty())
      throw IllegalValue("NetCount architectures have no TransCONV blocks or shortcuts");
  } else {
    if (spec.trans.size() != 3 || spec.shortcuts.size() != 3)
      throw IllegalValue("Hotspot architectures need exactly 3 TransCONV blocks and 3 shortcut flags");
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& o = kTransOptions[s];
      const auto stage = "TransCONV" + std::to_string(s + 1);
      bits.push_back(option_bit(o.kernel, spec.trans[s].kernel, "kernel", stage));
      bits.push_back(option_bit(o.n_blocks, spec.trans[s].n_blocks, "block count", stage));
      bits.push_back(option_bit(o.n_filters, spec.trans[s].n_filters, "filter count", stage));
    }
    for (bool s : spec.shortcuts) bits.push_back(s ? 1 : 0);
  }
  return {spec.task, std::move(bits)};
}

std::uint64_t space_size(Task task) { return std::uint64_t{1} << genome_length(task); }

Genome random_genome(Task task, Rng& rng) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(genome_length(task)));
  for (auto& b : bits) b = static_cast<std::uint8_t>(rng() >> 63);
  return {task, std::move(bits)};
}

Genome random_genome(Task task, std::uint64_t seed) {
  Rng rng(seed);
  return random_genome(task, rng);
}

ArchitectureSpec resnet18_spec(Task task) {
  ArchitectureSpec spec;
  spec.task = task;
  spec.conv = {{{3, 2, 64}, {3, 2, 128}, {3, 2, 256}, {3, 2, 512}}};
  spec.stem.n_filters = 64;
  if (task == Task::Hotspot) {
    spec.trans = {{3, 1, 256}, {3, 1, 128}, {3, 1, 64}};
    spec.shortcuts = {false, false, false};
  }
  return spec;
}

nlohmann::json spec_to_json(const ArchitectureSpec& spec) {
  using nlohmann::json;
  json conv = json::array();
  for (const auto& c : spec.conv) conv.push_back({{"kernel", c.kernel}, {"blocks", c.n_blocks}, {"filters", c.n_filters}});
  json trans = json::array();
  for (const auto& t : spec.trans)
    trans.push_back({{"kernel", t.kernel}, {"blocks", t.n_blocks}, {"filters", t.n_filters}});
  json shortcuts = json::array();
  for (bool s : spec.shortcuts) shortcuts.push_back(s);
  return {{"task", to_string(spec.task)},
          {"stem", {{"kernel", spec.stem.kernel}, {"stride", spec.stem.stride}, {"filters", spec.stem.n_filters}}},
          {"conv", std::move(conv)},
          {"trans", std::move(trans)},
          {"shortcuts", std::move(shortcuts)},
          {"head", {{"kernel", spec.head.kernel}}}};
}

ArchitectureSpec spec_from_json(const nlohmann::json& doc) {
  try {
    ArchitectureSpec spec;
    spec.task = task_from_string(doc.at("task").get<std::string>());
    const auto& stem = doc.at("stem");
    spec.stem = {stem.at("kernel").get<int>(), stem.at("stride").get<int>(), stem.at("filters").get<int>()};
    const auto& conv = doc.at("conv");
    if (conv.size() != 4) throw SchemaError("architecture needs 4 CONV blocks");
    for (std::size_t s = 0; s < 4; ++s)
      spec.conv[s] = {conv[s].at("kernel").get<int>(), conv[s].at("blocks").get<int>(), conv[s].at("filters").get<int>()};
    for (const auto& t : doc.at("trans"))
      spec.trans.push_back({t.at("kernel").get<int>(), t.at("blocks").get<int>(), t.at("filters").get<int>()});
    for (const auto& s : doc.at("shortcuts")) spec.shortcuts.push_back(s.get<bool>());
    spec.head.kernel = doc.at("head").at("kernel").get<int>();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed architecture description: ") + e.what());
  }
}

}  // namespace routenas
