#include <memory>

#include "seqforge/criterions.hpp"
#include "seqforge/model.hpp"
#include "seqforge/optim.hpp"
#include "seqforge/registry.hpp"
#include "seqforge/tasks.hpp"

namespace seqforge {

// Everything built in goes through the same registration calls a user
// plug-in would use; nothing below has a private construction path.
void register_builtins(Registry& r) {
  r.register_model(
      "transformer",
      [](const Config& cfg, uint64_t seed) -> std::unique_ptr<ModelBase> {
        return std::make_unique<TransformerModel>(cfg, seed);
      },
      transformer_default_config());

  ArchitectureDef tiny;
  tiny.name = "tiny_transformer";
  tiny.base_model = "transformer";
  tiny.overrides = {
      {"d_model", int64_t{16}},       {"heads", int64_t{2}},
      {"enc_layers", int64_t{1}},     {"dec_layers", int64_t{1}},
      {"d_ffn", int64_t{32}},         {"max_positions", int64_t{64}},
      {"share_embeddings", true},
  };
  r.register_architecture(std::move(tiny));

  r.register_criterion("cross_entropy", [](const Config&) -> std::unique_ptr<CriterionBase> {
    return std::make_unique<CrossEntropy>();
  });
  r.register_criterion("label_smoothed_cross_entropy",
                       [](const Config& cfg) -> std::unique_ptr<CriterionBase> {
                         return std::make_unique<LabelSmoothedCrossEntropy>(
                             cfg.get_real("label_smoothing"));
                       });

  r.register_task("translation", [](const Config& cfg) -> std::unique_ptr<TaskBase> {
    return std::make_unique<TranslationTask>(cfg);
  });

  r.register_optimizer("sgd", [](const Config&, int64_t) -> std::unique_ptr<OptimizerBase> {
    return std::make_unique<SgdOptimizer>();
  });
  r.register_optimizer("adam", [](const Config& cfg, int64_t nparams) -> std::unique_ptr<OptimizerBase> {
    return std::make_unique<AdamOptimizer>(nparams, cfg.get_real("adam_beta1"),
                                           cfg.get_real("adam_beta2"), cfg.get_real("adam_eps"));
  });

  r.register_scheduler("fixed", [](const Config& cfg) -> std::unique_ptr<SchedulerBase> {
    return std::make_unique<FixedSchedule>(cfg.get_real("lr"));
  });
  r.register_scheduler("inverse_sqrt", [](const Config& cfg) -> std::unique_ptr<SchedulerBase> {
    return std::make_unique<InverseSqrtSchedule>(cfg.get_real("lr"), cfg.get_int("warmup"),
                                                 cfg.get_real("warmup_init_lr"));
  });
  r.register_scheduler("cosine_restart", [](const Config& cfg) -> std::unique_ptr<SchedulerBase> {
    return std::make_unique<CosineRestartSchedule>(cfg.get_real("lr"), cfg.get_real("eta_min"),
                                                   cfg.get_int("cosine_period"),
                                                   cfg.get_real("cosine_t_mult"));
  });
}

Registry& global_registry() {
  static Registry reg = [] {
    Registry r;
    register_builtins(r);
    return r;
  }();
  return reg;
}

}  // namespace seqforge
