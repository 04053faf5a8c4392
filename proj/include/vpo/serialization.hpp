#pragma once

#include <string>

#include <json.hpp>

#include "vpo/core.hpp"
#include "vpo/ports.hpp"

namespace vpo {

/// Insertion-ordered JSON so artifacts are byte-stable.
using Json = nlohmann::ordered_json;

void to_json(Json& j, const Variant& v);
void from_json(const Json& j, Variant& v);

void to_json(Json& j, const Payload& p);
void from_json(const Json& j, Payload& p);

void to_json(Json& j, const ImageRef& image);
void from_json(const Json& j, ImageRef& image);

void to_json(Json& j, const Theme& theme);
void from_json(const Json& j, Theme& theme);

/// The trial JSONL row. Field order is part of the contract.
Json trial_to_json(const TrialRecord& record);
/// Strict: unknown or missing fields and bad enum values raise SchemaError.
TrialRecord trial_from_json(const Json& j);

Json read_json_file(const std::string& path);
/// Writes through a temporary file and rename, so readers never see a
/// partial document.
void write_json_file(const std::string& path, const Json& j, int indent = 2);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace vpo
