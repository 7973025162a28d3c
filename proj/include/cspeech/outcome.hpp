#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

namespace cspeech {

enum class TaskName { incivility, reentry };

/// Incivility labels in their fixed tie-break order.
enum class Incivility { high = 0, medium = 1, low = 2 };
/// Hater-reentry labels in their fixed tie-break order.
enum class Reentry { hate_reentry = 0, no_reentry = 1, nonhate_reentry = 2 };

inline constexpr std::size_t kNumLabels = 3;

/// Label set and desired label of one conversation-outcome task. Labels are
/// addressed by index in [0, 3); the index order is the tie-break order.
struct OutcomeTask {
  TaskName name;
  std::array<std::string_view, kNumLabels> labels;
  std::size_t desired;

  std::string_view desired_label() const { return labels[desired]; }
  /// Index of a label name; throws ConfigError for names outside the task.
  std::size_t label_index(std::string_view label) const;

  static const OutcomeTask& incivility();
  static const OutcomeTask& reentry();
  static const OutcomeTask& get(TaskName name);
};

std::string_view to_string(TaskName t);
TaskName parse_task_name(std::string_view s);

std::string_view to_string(Incivility v);
std::string_view to_string(Reentry v);
Incivility parse_incivility(std::string_view s);
Reentry parse_reentry(std::string_view s);

/// Name used in method names for a controller: incivility -> "effective",
/// reentry -> "reentry".
std::string_view target_name(TaskName t);
TaskName parse_target_name(std::string_view s);

}  // namespace cspeech
