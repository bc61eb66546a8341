#pragma once

#include "json.hpp"
#include "msef/model.hpp"

namespace msef::model {

nlohmann::json adapter_to_json(const AdapterConfig& c);
AdapterConfig adapter_from_json(const nlohmann::json& j);

}  // namespace msef::model
