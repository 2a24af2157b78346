#include "routenas/nsga2.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>
#include <set>
#include <thread>

#include "routenas/errors.hpp"

namespace routenas {

SearchConfig SearchConfig::desk(Task task) {
  SearchConfig c;
  c.task = task;
  c.population_size = 8;
  c.offspring_size = 8;
  c.generations = 5;
  return c;
}

SearchConfig SearchConfig::paper(Task task) {
  SearchConfig c;
  c.task = task;
  return c;
}

void SearchConfig::validate() const {
  if (population_size < 2) throw ConfigError("population size must be at least 2");
  if (offspring_size < 1 || offspring_size > population_size)
    throw ConfigError("offspring size must lie in [1, population size]");
  if (generations < 1) throw ConfigError("generation count must be at least 1");
  if (crossover_probability < 0.0 || crossover_probability > 1.0)
    throw ConfigError("crossover probability must lie in [0, 1]");
  if (mutation_probability > 1.0) throw ConfigError("mutation probability must lie in [0, 1]");
  if (!(mutation_eta > 0.0)) throw ConfigError("mutation eta must be positive");
  if (tournament_size < 1 || tournament_size > population_size)
    throw ConfigError("tournament size must lie in [1, population size]");
  if (workers < 1) throw ConfigError("worker count must be at least 1");
}

bool dominates(std::span<const double> a, std::span<const double> b) {
  bool strictly = false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k] < b[k]) return false;
    if (a[k] > b[k]) strictly = true;
  }
  return strictly;
}

std::vector<std::vector<std::size_t>> fast_non_dominated_sort(std::vector<Individual>& population) {
  const std::size_t n = population.size();
  std::vector<std::vector<std::size_t>> dominated(n);
  std::vector<std::size_t> domination_count(n, 0);
  std::vector<std::vector<std::size_t>> fronts(1);

  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (dominates(population[a].objectives, population[b].objectives)) {
        dominated[a].push_back(b);
        ++domination_count[b];
      } else if (dominates(population[b].objectives, population[a].objectives)) {
        dominated[b].push_back(a);
        ++domination_count[a];
      }
    }
  }
  for (std::size_t a = 0; a < n; ++a)
    if (domination_count[a] == 0) fronts[0].push_back(a);

  for (std::size_t f = 0; f < fronts.size() && !fronts[f].empty(); ++f) {
    std::vector<std::size_t> next;
    for (auto a : fronts[f]) {
      population[a].rank = static_cast<int>(f);
      for (auto b : dominated[a])
        if (--domination_count[b] == 0) next.push_back(b);
    }
    std::sort(next.begin(), next.end());
    if (!next.empty()) fronts.push_back(std::move(next));
  }
  if (fronts.back().empty()) fronts.pop_back();
  return fronts;
}

std::vector<double> crowding_distance(std::span<const std::vector<double>> front) {
  const std::size_t n = front.size();
  std::vector<double> dist(n, 0.0);
  if (n == 0) return dist;
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (n <= 2) {
    std::fill(dist.begin(), dist.end(), inf);
    return dist;
  }
  const std::size_t m = front[0].size();
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < m; ++k) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return front[a][k] < front[b][k]; });
    const double lo = front[order.front()][k];
    const double hi = front[order.back()][k];
    dist[order.front()] = inf;
    dist[order.back()] = inf;
    if (hi == lo) continue;
    for (std::size_t r = 1; r + 1 < n; ++r) {
      auto& d = dist[order[r]];
      if (std::isinf(d)) continue;
      d += (front[order[r + 1]][k] - front[order[r - 1]][k]) / (hi - lo);
    }
  }
  return dist;
}

bool crowded_better(const Individual& a, const Individual& b) {
  if (a.rank != b.rank) return a.rank < b.rank;
  if (a.crowding != b.crowding) return a.crowding > b.crowding;
  return a.genome < b.genome;
}

std::size_t tournament_select(std::span<const Individual> population, int k, Rng& rng) {
  const std::size_t n = population.size();
  const auto kk = static_cast<std::size_t>(std::clamp<int>(k, 1, static_cast<int>(n)));
  // Partial Fisher-Yates draws kk distinct indices.
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t s = 0; s < kk; ++s) std::swap(idx[s], idx[s + uniform_index(rng, n - s)]);
  std::size_t winner = idx[0];
  for (std::size_t s = 1; s < kk; ++s)
    if (crowded_better(population[idx[s]], population[winner])) winner = idx[s];
  return winner;
}

std::pair<Genome, Genome> crossover_at(const Genome& a, const Genome& b, std::size_t i, std::size_t j) {
  if (a.task != b.task || a.size() != b.size()) throw TaskMismatch("crossover parents belong to different tasks");
  if (i > j || j > a.size()) throw IllegalValue("crossover points out of range");
  Genome c1 = a, c2 = b;
  for (std::size_t k = i; k < j; ++k) std::swap(c1.bits[k], c2.bits[k]);
  return {std::move(c1), std::move(c2)};
}

std::pair<Genome, Genome> crossover(const Genome& a, const Genome& b, Rng& rng) {
  if (a.task != b.task || a.size() != b.size()) throw TaskMismatch("crossover parents belong to different tasks");
  const std::size_t n = a.size();
  // Uniform over pairs 0 <= i < j <= n.
  std::size_t i = uniform_index(rng, n + 1);
  std::size_t j = uniform_index(rng, n);
  if (j >= i) ++j;
  if (i > j) std::swap(i, j);
  return crossover_at(a, b, i, j);
}

std::uint8_t mutate_bit(std::uint8_t bit, double eta, double r) {
  // Integer variables are relaxed to [lo - 0.5, hi + 0.5) before mutation and rounded afterwards.
  const double xl = 0.0 - (0.5 - 1e-16);
  const double xu = 1.0 + (0.5 - 1e-16);
  const double x = bit;
  const double range = xu - xl;
  const double delta1 = (x - xl) / range;
  const double delta2 = (xu - x) / range;
  const double mut_pow = 1.0 / (eta + 1.0);
  double deltaq;
  if (r <= 0.5) {
    const double xy = 1.0 - delta1;
    const double val = 2.0 * r + (1.0 - 2.0 * r) * std::pow(xy, eta + 1.0);
    deltaq = std::pow(val, mut_pow) - 1.0;
  } else {
    const double xy = 1.0 - delta2;
    const double val = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * std::pow(xy, eta + 1.0);
    deltaq = 1.0 - std::pow(val, mut_pow);
  }
  const double y = std::clamp(x + deltaq * range, xl, xu);
  return static_cast<std::uint8_t>(std::clamp(std::nearbyint(y), 0.0, 1.0));
}

Genome mutate(const Genome& g, double eta, double probability, Rng& rng) {
  if (probability < 0.0 || probability > 1.0) throw IllegalValue("mutation probability must lie in [0, 1]");
  Genome out = g;
  for (auto& b : out.bits) {
    const bool hit = uniform01(rng) < probability;
    const double r = uniform01(rng);
    if (hit) b = mutate_bit(b, eta, r);
  }
  return out;
}

namespace {

class Memo {
 public:
  Memo(const Evaluator& evaluator, int workers) : evaluator_(evaluator), workers_(workers) {}

  /// Evaluates every genome not seen before; jobs run in parallel and are stored by genome.
  void evaluate(const std::vector<Genome>& genomes) {
    std::set<Genome> pending;
    for (const auto& g : genomes)
      if (!cache_.contains(g)) pending.insert(g);
    std::vector<Genome> jobs(pending.begin(), pending.end());
    std::vector<std::vector<double>> results(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());

    std::atomic<std::size_t> next{0};
    auto work = [&] {
      for (std::size_t k = next++; k < jobs.size(); k = next++) {
        try {
          results[k] = evaluator_(jobs[k]);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
    };
    const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(workers_), jobs.size());
    if (n_threads <= 1) {
      work();
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(work);
    }

    for (std::size_t k = 0; k < jobs.size(); ++k) {
      if (errors[k]) {
        try {
          std::rethrow_exception(errors[k]);
        } catch (const std::exception& e) {
          throw EvaluatorFailure(jobs[k].str(), e.what());
        } catch (...) {
          throw EvaluatorFailure(jobs[k].str(), "unknown exception");
        }
      }
      const auto& obj = results[k];
      if (obj.empty()) throw EvaluatorFailure(jobs[k].str(), "evaluator returned no objectives");
      if (n_objectives_ == 0) n_objectives_ = obj.size();
      if (obj.size() != n_objectives_) throw EvaluatorFailure(jobs[k].str(), "inconsistent objective count");
      for (double v : obj)
        if (!std::isfinite(v)) throw EvaluatorFailure(jobs[k].str(), "non-finite objective");
      cache_.emplace(jobs[k], obj);
    }
  }

  const std::vector<double>& at(const Genome& g) const { return cache_.at(g); }
  const std::map<Genome, std::vector<double>>& all() const { return cache_; }

 private:
  const Evaluator& evaluator_;
  int workers_;
  std::size_t n_objectives_ = 0;
  std::map<Genome, std::vector<double>> cache_;
};

bool primary_better(const Individual& a, const Individual& b) {
  if (a.objectives[0] != b.objectives[0]) return a.objectives[0] > b.objectives[0];
  return a.genome < b.genome;
}

void assign_rank_and_crowding(std::vector<Individual>& pop, std::vector<std::vector<std::size_t>>* fronts_out = nullptr) {
  auto fronts = fast_non_dominated_sort(pop);
  for (const auto& front : fronts) {
    std::vector<std::vector<double>> objs;
    objs.reserve(front.size());
    for (auto i : front) objs.push_back(pop[i].objectives);
    const auto d = crowding_distance(objs);
    for (std::size_t r = 0; r < front.size(); ++r) pop[front[r]].crowding = d[r];
  }
  if (fronts_out) *fronts_out = std::move(fronts);
}

std::vector<Individual> environmental_selection(std::vector<Individual> merged, std::size_t keep) {
  std::vector<std::vector<std::size_t>> fronts;
  assign_rank_and_crowding(merged, &fronts);
  std::vector<Individual> next;
  next.reserve(keep);
  for (auto& front : fronts) {
    if (next.size() + front.size() <= keep) {
      for (auto i : front) next.push_back(merged[i]);
      continue;
    }
    std::sort(front.begin(), front.end(),
              [&](std::size_t a, std::size_t b) { return crowded_better(merged[a], merged[b]); });
    for (std::size_t r = 0; next.size() < keep; ++r) next.push_back(merged[front[r]]);
    break;
  }
  // Crowding is relative to the surviving population.
  assign_rank_and_crowding(next);
  return next;
}

GenerationRecord record(int t, const std::vector<Individual>& pop, const Memo& memo) {
  GenerationRecord rec;
  rec.generation = t;
  const auto best = std::min_element(pop.begin(), pop.end(), primary_better);
  rec.best_objectives = best->objectives;
  rec.best_genome = best->genome;
  rec.mean_objectives.assign(best->objectives.size(), 0.0);
  for (const auto& ind : pop)
    for (std::size_t k = 0; k < ind.objectives.size(); ++k) rec.mean_objectives[k] += ind.objectives[k];
  for (auto& v : rec.mean_objectives) v /= static_cast<double>(pop.size());
  rec.best_so_far = -std::numeric_limits<double>::infinity();
  for (const auto& [g, obj] : memo.all()) rec.best_so_far = std::max(rec.best_so_far, obj[0]);
  rec.evaluations = static_cast<int>(memo.all().size());
  return rec;
}

}  // namespace

SearchResult evolve(const SearchConfig& config, const Evaluator& evaluator) {
  config.validate();
  const auto n = static_cast<std::size_t>(genome_length(config.task));
  const double pm = config.mutation_probability < 0.0 ? 1.0 / static_cast<double>(n) : config.mutation_probability;
  const auto p = static_cast<std::size_t>(config.population_size);
  const auto q = static_cast<std::size_t>(config.offspring_size);
  const bool can_be_distinct = space_size(config.task) >= p + q;

  Rng rng(config.seed);
  Memo memo(evaluator, config.workers);

  std::vector<Genome> initial;
  std::set<Genome> seen;
  for (int attempts = 0; initial.size() < p; ++attempts) {
    auto g = random_genome(config.task, rng);
    if (seen.insert(g).second || !can_be_distinct || attempts > 1000) initial.push_back(std::move(g));
  }
  memo.evaluate(initial);

  std::vector<Individual> pop;
  for (auto& g : initial) pop.push_back({g, memo.at(g), 0, 0.0});
  assign_rank_and_crowding(pop);

  SearchResult result;
  result.history.records.push_back(record(0, pop, memo));

  for (int t = 1; t <= config.generations; ++t) {
    // Offspring must be new to the whole archive, not only to the current population; after the attempt
    // budget runs out duplicates are accepted (and served from the memo).
    std::set<Genome> existing;
    for (const auto& [g, obj] : memo.all()) existing.insert(g);
    std::vector<Genome> offspring;
    const std::size_t attempt_limit = 100 * q;
    for (std::size_t attempts = 0; offspring.size() < q; ++attempts) {
      const auto& a = pop[tournament_select(pop, config.tournament_size, rng)].genome;
      const auto& b = pop[tournament_select(pop, config.tournament_size, rng)].genome;
      auto children = uniform01(rng) < config.crossover_probability ? crossover(a, b, rng) : std::make_pair(a, b);
      for (Genome* c : {&children.first, &children.second}) {
        Genome child = mutate(*c, config.mutation_eta, pm, rng);
        if (offspring.size() >= q) break;
        if (existing.insert(child).second || !can_be_distinct || attempts >= attempt_limit)
          offspring.push_back(std::move(child));
      }
    }
    memo.evaluate(offspring);

    std::vector<Individual> merged = pop;
    for (auto& g : offspring) merged.push_back({g, memo.at(g), 0, 0.0});
    pop = environmental_selection(std::move(merged), p);
    result.history.records.push_back(record(t, pop, memo));
  }

  for (const auto& [g, obj] : memo.all()) result.archive.push_back({g, obj, 0, 0.0});
  std::sort(result.archive.begin(), result.archive.end(), primary_better);
  result.best = result.archive.front();
  result.final_population = pop;
  return result;
}

nlohmann::json search_config_to_json(const SearchConfig& c) {
  return {{"task", to_string(c.task)},
          {"population_size", c.population_size},
          {"offspring_size", c.offspring_size},
          {"generations", c.generations},
          {"crossover_probability", c.crossover_probability},
          {"mutation_eta", c.mutation_eta},
          {"mutation_probability", c.mutation_probability},
          {"tournament_size", c.tournament_size},
          {"seed", c.seed},
          {"minimize_parameters", c.minimize_parameters}};
}

nlohmann::json individual_to_json(const Individual& ind) {
  return {{"genome", ind.genome.str()}, {"objectives", ind.objectives}};
}

nlohmann::json history_to_json(const SearchHistory& history) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : history.records)
    out.push_back({{"generation", r.generation},
                   {"best_objectives", r.best_objectives},
                   {"mean_objectives", r.mean_objectives},
                   {"best_genome", r.best_genome.str()},
                   {"best_so_far", r.best_so_far},
                   {"evaluations", r.evaluations}});
  return out;
}

}  // namespace routenas
