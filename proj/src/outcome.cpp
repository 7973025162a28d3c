#include "cspeech/outcome.hpp"

#include "cspeech/common.hpp"

namespace cspeech {

std::size_t OutcomeTask::label_index(std::string_view label) const {
  for (std::size_t i = 0; i < kNumLabels; ++i)
    if (labels[i] == label) return i;
  throw ConfigError("label '" + std::string(label) + "' is not part of task " +
                    std::string(to_string(name)));
}

const OutcomeTask& OutcomeTask::incivility() {
  static const OutcomeTask t{TaskName::incivility, {"high", "medium", "low"}, 2};
  return t;
}

const OutcomeTask& OutcomeTask::reentry() {
  static const OutcomeTask t{TaskName::reentry, {"hate_reentry", "no_reentry", "nonhate_reentry"}, 2};
  return t;
}

const OutcomeTask& OutcomeTask::get(TaskName name) {
  return name == TaskName::incivility ? incivility() : reentry();
}

std::string_view to_string(TaskName t) { return t == TaskName::incivility ? "incivility" : "reentry"; }

TaskName parse_task_name(std::string_view s) {
  if (s == "incivility") return TaskName::incivility;
  if (s == "reentry") return TaskName::reentry;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

std::string_view to_string(Incivility v) { return OutcomeTask::incivility().labels[static_cast<std::size_t>(v)]; }
std::string_view to_string(Reentry v) { return OutcomeTask::reentry().labels[static_cast<std::size_t>(v)]; }

Incivility parse_incivility(std::string_view s) {
  return static_cast<Incivility>(OutcomeTask::incivility().label_index(s));
}

Reentry parse_reentry(std::string_view s) { return static_cast<Reentry>(OutcomeTask::reentry().label_index(s)); }

std::string_view target_name(TaskName t) { return t == TaskName::incivility ? "effective" : "reentry"; }

TaskName parse_target_name(std::string_view s) {
  if (s == "effective") return TaskName::incivility;
  if (s == "reentry") return TaskName::reentry;
  throw ConfigError("unknown outcome target '" + std::string(s) + "' (expected effective|reentry)");
}

}  // namespace cspeech
