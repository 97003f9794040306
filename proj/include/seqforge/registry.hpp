#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "seqforge/config.hpp"
#include "seqforge/plugins.hpp"

namespace seqforge {

struct ArchitectureDef {
  std::string name;
  std::string base_model;
  std::vector<std::pair<std::string, ConfigValue>> overrides;
};

// Five disjoint name -> constructor namespaces plus named-architecture
// expansion. Builtins register through the same public calls as user
// plug-ins (see register_builtins).
class Registry {
 public:
  using ModelCtor =
      std::function<std::unique_ptr<ModelBase>(const Config&, uint64_t seed)>;
  using CriterionCtor = std::function<std::unique_ptr<CriterionBase>(const Config&)>;
  using TaskCtor = std::function<std::unique_ptr<TaskBase>(const Config&)>;
  using OptimizerCtor =
      std::function<std::unique_ptr<OptimizerBase>(const Config&, int64_t nparams)>;
  using SchedulerCtor = std::function<std::unique_ptr<SchedulerBase>(const Config&)>;

  // `origin` identifies the registrant in conflict errors
  void register_model(const std::string& name, ModelCtor ctor, Config defaults,
                      const std::string& origin = "builtin");
  void register_criterion(const std::string& name, CriterionCtor ctor,
                          const std::string& origin = "builtin");
  void register_task(const std::string& name, TaskCtor ctor,
                     const std::string& origin = "builtin");
  void register_optimizer(const std::string& name, OptimizerCtor ctor,
                          const std::string& origin = "builtin");
  void register_scheduler(const std::string& name, SchedulerCtor ctor,
                          const std::string& origin = "builtin");
  void register_architecture(ArchitectureDef def, const std::string& origin = "builtin");

  // defaults (engine + base model) + architecture overrides + user
  // overrides, with provenance per key; unknown user keys are rejected.
  // User overrides arrive as raw key/value text, as flags and config
  // files deliver them, and are parsed against the declared key's type.
  Config resolve_architecture(
      const std::string& arch_name,
      const std::vector<std::pair<std::string, std::string>>& user = {}) const;

  std::unique_ptr<ModelBase> make_model(const std::string& name, const Config& cfg,
                                        uint64_t seed) const;
  std::unique_ptr<CriterionBase> make_criterion(const std::string& name,
                                                const Config& cfg) const;
  std::unique_ptr<TaskBase> make_task(const std::string& name, const Config& cfg) const;
  std::unique_ptr<OptimizerBase> make_optimizer(const std::string& name,
                                                const Config& cfg,
                                                int64_t nparams) const;
  std::unique_ptr<SchedulerBase> make_scheduler(const std::string& name,
                                                const Config& cfg) const;

  const ArchitectureDef& architecture(const std::string& name) const;
  std::vector<std::string> model_names() const;
  std::vector<std::string> criterion_names() const;
  std::vector<std::string> task_names() const;
  std::vector<std::string> optimizer_names() const;
  std::vector<std::string> scheduler_names() const;
  std::vector<std::string> architecture_names() const;
  const Config& model_defaults(const std::string& name) const;

 private:
  template <typename C>
  struct Slot {
    C ctor;
    std::string origin;
  };
  std::map<std::string, Slot<ModelCtor>> models_;
  std::map<std::string, Config> model_defaults_;
  std::map<std::string, Slot<CriterionCtor>> criterions_;
  std::map<std::string, Slot<TaskCtor>> tasks_;
  std::map<std::string, Slot<OptimizerCtor>> optimizers_;
  std::map<std::string, Slot<SchedulerCtor>> schedulers_;
  std::map<std::string, std::pair<ArchitectureDef, std::string>> architectures_;
};

// Engine-level declared keys (training, generation, data); model keys are
// contributed per registered model.
Config engine_default_config();

// Registers every shipped component; idempotent only on fresh registries.
void register_builtins(Registry& reg);

// Process-wide registry with builtins installed.
Registry& global_registry();

}  // namespace seqforge
