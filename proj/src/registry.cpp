#include "seqforge/registry.hpp"

#include <sstream>

namespace seqforge {

namespace {

template <typename M>
std::string joined_names(const M& m) {
  std::ostringstream ss;
  bool first = true;
  for (const auto& [k, v] : m) {
    if (!first) ss << ", ";
    ss << k;
    first = false;
  }
  return first ? "(none)" : ss.str();
}

template <typename M, typename C>
void insert_slot(M& m, const std::string& ns, const std::string& name, C ctor,
                 const std::string& origin) {
  if (name.empty()) throw RegistryError(ns + ": plugin name must be non-empty");
  auto it = m.find(name);
  if (it != m.end())
    throw RegistryError(ns + " '" + name + "': already registered by '" +
                        it->second.origin + "', duplicate registration from '" + origin +
                        "'");
  m.emplace(name, typename M::mapped_type{std::move(ctor), origin});
}

template <typename M>
const auto& find_slot(const M& m, const std::string& ns, const std::string& name) {
  auto it = m.find(name);
  if (it == m.end())
    throw RegistryError("unknown " + ns + " '" + name + "'; registered: " + joined_names(m));
  return it->second;
}

template <typename M>
std::vector<std::string> slot_names(const M& m) {
  std::vector<std::string> out;
  for (const auto& [k, v] : m) out.push_back(k);
  return out;
}

}  // namespace

void Registry::register_model(const std::string& name, ModelCtor ctor, Config defaults,
                              const std::string& origin) {
  insert_slot(models_, "model", name, std::move(ctor), origin);
  model_defaults_.emplace(name, std::move(defaults));
}

void Registry::register_criterion(const std::string& name, CriterionCtor ctor,
                                  const std::string& origin) {
  insert_slot(criterions_, "criterion", name, std::move(ctor), origin);
}

void Registry::register_task(const std::string& name, TaskCtor ctor,
                             const std::string& origin) {
  insert_slot(tasks_, "task", name, std::move(ctor), origin);
}

void Registry::register_optimizer(const std::string& name, OptimizerCtor ctor,
                                  const std::string& origin) {
  insert_slot(optimizers_, "optimizer", name, std::move(ctor), origin);
}

void Registry::register_scheduler(const std::string& name, SchedulerCtor ctor,
                                  const std::string& origin) {
  insert_slot(schedulers_, "scheduler", name, std::move(ctor), origin);
}

void Registry::register_architecture(ArchitectureDef def, const std::string& origin) {
  if (def.name.empty()) throw RegistryError("architecture: name must be non-empty");
  if (models_.find(def.base_model) == models_.end())
    throw RegistryError("architecture '" + def.name + "': unknown base model '" +
                        def.base_model + "'");
  const Config& defaults = model_defaults_.at(def.base_model);
  const Config engine = engine_default_config();
  for (const auto& [k, v] : def.overrides)
    if (!defaults.has(k) && !engine.has(k))
      throw RegistryError("architecture '" + def.name + "': overrides undeclared key '" +
                          k + "'");
  auto it = architectures_.find(def.name);
  if (it != architectures_.end())
    throw RegistryError("architecture '" + def.name + "': already registered by '" +
                        it->second.second + "', duplicate registration from '" + origin +
                        "'");
  const std::string name = def.name;  // read before the move below
  architectures_.emplace(name, std::make_pair(std::move(def), origin));
}

Config Registry::resolve_architecture(
    const std::string& arch_name,
    const std::vector<std::pair<std::string, std::string>>& user) const {
  auto it = architectures_.find(arch_name);
  if (it == architectures_.end())
    throw RegistryError("unknown architecture '" + arch_name +
                        "'; registered: " + joined_names(architectures_));
  const ArchitectureDef& def = it->second.first;
  Config resolved = engine_default_config();
  resolved.merge_from(model_defaults_.at(def.base_model));
  resolved.set_arch("arch", arch_name);
  for (const auto& [k, v] : def.overrides) resolved.set_arch(k, v);
  for (const auto& [k, raw] : user) resolved.set_user_raw(k, raw);
  return resolved;
}

std::unique_ptr<ModelBase> Registry::make_model(const std::string& name,
                                                const Config& cfg, uint64_t seed) const {
  const auto& slot = find_slot(models_, "model", name);
  try {
    return slot.ctor(cfg, seed);
  } catch (const std::exception& e) {
    throw RegistryError("model '" + name + "': " + e.what());
  }
}

std::unique_ptr<CriterionBase> Registry::make_criterion(const std::string& name,
                                                        const Config& cfg) const {
  const auto& slot = find_slot(criterions_, "criterion", name);
  try {
    return slot.ctor(cfg);
  } catch (const std::exception& e) {
    throw RegistryError("criterion '" + name + "': " + e.what());
  }
}

std::unique_ptr<TaskBase> Registry::make_task(const std::string& name,
                                              const Config& cfg) const {
  const auto& slot = find_slot(tasks_, "task", name);
  try {
    return slot.ctor(cfg);
  } catch (const std::exception& e) {
    throw RegistryError("task '" + name + "': " + e.what());
  }
}

std::unique_ptr<OptimizerBase> Registry::make_optimizer(const std::string& name,
                                                        const Config& cfg,
                                                        int64_t nparams) const {
  const auto& slot = find_slot(optimizers_, "optimizer", name);
  try {
    return slot.ctor(cfg, nparams);
  } catch (const std::exception& e) {
    throw RegistryError("optimizer '" + name + "': " + e.what());
  }
}

std::unique_ptr<SchedulerBase> Registry::make_scheduler(const std::string& name,
                                                        const Config& cfg) const {
  const auto& slot = find_slot(schedulers_, "scheduler", name);
  try {
    return slot.ctor(cfg);
  } catch (const std::exception& e) {
    throw RegistryError("scheduler '" + name + "': " + e.what());
  }
}

const ArchitectureDef& Registry::architecture(const std::string& name) const {
  auto it = architectures_.find(name);
  if (it == architectures_.end())
    throw RegistryError("unknown architecture '" + name +
                        "'; registered: " + joined_names(architectures_));
  return it->second.first;
}

std::vector<std::string> Registry::model_names() const { return slot_names(models_); }
std::vector<std::string> Registry::criterion_names() const { return slot_names(criterions_); }
std::vector<std::string> Registry::task_names() const { return slot_names(tasks_); }
std::vector<std::string> Registry::optimizer_names() const { return slot_names(optimizers_); }
std::vector<std::string> Registry::scheduler_names() const { return slot_names(schedulers_); }
std::vector<std::string> Registry::architecture_names() const { return slot_names(architectures_); }

const Config& Registry::model_defaults(const std::string& name) const {
  auto it = model_defaults_.find(name);
  if (it == model_defaults_.end())
    throw RegistryError("unknown model '" + name + "'; registered: " + joined_names(models_));
  return it->second;
}

Config engine_default_config() {
  Config c;
  // identity / plumbing
  c.declare("seed", int64_t{1});
  c.declare("arch", std::string{"tiny_transformer"});
  c.declare("task", std::string{"translation"});
  // data
  c.declare("train_src", std::string{});
  c.declare("train_tgt", std::string{});
  c.declare("valid_src", std::string{});
  c.declare("valid_tgt", std::string{});
  c.declare("dict_src", std::string{});
  c.declare("dict_tgt", std::string{});
  c.declare("min_count", int64_t{1});
  c.declare("max_tokens", int64_t{1024});
  c.declare("max_sentences", int64_t{0});  // 0 = uncapped
  // trainer
  c.declare("workers", int64_t{1});
  c.declare("accum", int64_t{1});
  c.declare("fp16", false);
  c.declare("fp16_init_scale", 128.0);
  c.declare("fp16_scale_window", int64_t{256});
  c.declare("fp16_min_scale", 0.03125);
  c.declare("fp16_max_scale", 32768.0);
  c.declare("bucket_threshold", int64_t{16384});
  c.declare("max_steps", int64_t{-1});  // -1 = no step cap
  c.declare("max_epochs", int64_t{1});
  c.declare("save_interval", int64_t{100});
  c.declare("save_dir", std::string{"checkpoints"});
  // criterion
  c.declare("criterion", std::string{"label_smoothed_cross_entropy"});
  c.declare("label_smoothing", 0.1);
  // optimizer
  c.declare("optimizer", std::string{"adam"});
  c.declare("lr", 5e-4);
  c.declare("adam_beta1", 0.9);
  c.declare("adam_beta2", 0.98);
  c.declare("adam_eps", 1e-8);
  // scheduler
  c.declare("scheduler", std::string{"inverse_sqrt"});
  c.declare("warmup", int64_t{400});
  c.declare("warmup_init_lr", 0.0);
  c.declare("cosine_period", int64_t{1000});
  c.declare("cosine_t_mult", 1.0);
  c.declare("eta_min", 0.0);
  // generation
  c.declare("beam", int64_t{4});
  c.declare("lenpen", 0.6);
  c.declare("max_len", int64_t{0});  // 0 = 2*source_len + 8
  c.declare("diverse_groups", int64_t{1});
  c.declare("diverse_strength", 0.5);
  c.declare("sampling", false);
  c.declare("topk", int64_t{1});
  c.declare("temperature", 1.0);
  c.declare("nbest", int64_t{1});
  return c;
}

}  // namespace seqforge
