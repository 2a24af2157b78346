#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "routenas/random.hpp"
#include "routenas/search_space.hpp"

namespace routenas {

/// Objectives are maximized.
struct Individual {
  Genome genome;
  std::vector<double> objectives;
  int rank = 0;
  double crowding = 0.0;
};

struct SearchConfig {
  Task task = Task::NetCount;
  int population_size = 20;  // p
  int offspring_size = 20;   // q
  int generations = 15;      // T
  double crossover_probability = 0.9;
  double mutation_eta = 20.0;
  /// Per-option mutation probability; negative means 1 / n.
  double mutation_probability = -1.0;
  int tournament_size = 2;
  std::uint64_t seed = 0;
  /// Adds "negative parameter count" as a second objective when the evaluator supplies it.
  bool minimize_parameters = false;
  /// Parallel fitness jobs per generation; results are reduced in genome order.
  int workers = 1;

  static SearchConfig desk(Task task);
  static SearchConfig paper(Task task);
  void validate() const;
};

struct GenerationRecord {
  int generation = 0;
  std::vector<double> best_objectives;  // best of the population by the primary objective
  std::vector<double> mean_objectives;
  Genome best_genome;
  double best_so_far = 0.0;  // primary objective, over every genome evaluated so far
  int evaluations = 0;       // distinct genomes evaluated so far
};

struct SearchHistory {
  std::vector<GenerationRecord> records;  // T + 1 entries, the first for the initial population
};

struct SearchResult {
  Individual best;
  SearchHistory history;
  std::vector<Individual> final_population;
  /// Every distinct genome evaluated, best primary objective first (ties: lower genome).
  std::vector<Individual> archive;
};

using Evaluator = std::function<std::vector<double>(const Genome&)>;

/// Fronts of mutually non-dominated individuals; assigns Individual::rank.
std::vector<std::vector<std::size_t>> fast_non_dominated_sort(std::vector<Individual>& population);

bool dominates(std::span<const double> a, std::span<const double> b);

/// Crowding distance of each member of one front, in the order given.
std::vector<double> crowding_distance(std::span<const std::vector<double>> front_objectives);

/// Lower rank, then larger crowding, then lexicographically smaller genome.
bool crowded_better(const Individual& a, const Individual& b);

/// Samples k distinct members and returns the index of the winner.
std::size_t tournament_select(std::span<const Individual> population, int k, Rng& rng);

/// Two-point crossover swapping positions [i, j).
std::pair<Genome, Genome> crossover_at(const Genome& a, const Genome& b, std::size_t i, std::size_t j);
std::pair<Genome, Genome> crossover(const Genome& a, const Genome& b, Rng& rng);

/// Polynomial mutation of a single option relaxed to the real interval around {0, 1}, then rounded.
std::uint8_t mutate_bit(std::uint8_t bit, double eta, double r);
Genome mutate(const Genome& g, double eta, double probability, Rng& rng);

SearchResult evolve(const SearchConfig& config, const Evaluator& evaluator);

nlohmann::json search_config_to_json(const SearchConfig& config);
nlohmann::json individual_to_json(const Individual& ind);
nlohmann::json history_to_json(const SearchHistory& history);

}  // namespace routenas
