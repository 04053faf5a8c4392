#pragma once

#include <string>

#include "vpo/core.hpp"
#include "vpo/serialization.hpp"

// Task fixtures: the shipped prompt sets for the four built-in tasks plus
// user-supplied custom tasks in the same JSON layout.

namespace vpo {

/// VPO_DATA_DIR from the environment, else the compiled-in data directory.
std::string data_dir();

TaskSpec task_from_json(const Json& j);
Json task_to_json(const TaskSpec& task);

/// Reads a task file; relative `category_labels` paths resolve next to it.
TaskSpec load_task_file(const std::string& path);
/// `<data_dir>/tasks/<name>.json` for a built-in task.
TaskSpec load_builtin_task(TaskId task);
/// A built-in task name, or a path to a custom task file.
TaskSpec load_task(const std::string& name_or_path);

struct InterpretPrompts {
  std::string detector_instruction;
  std::string summarizer_instruction;
};
InterpretPrompts load_interpret_prompts();

}  // namespace vpo
