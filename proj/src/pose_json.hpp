#pragma once

#include "json.hpp"
#include "unicon/schedulers.hpp"

namespace unicon {

nlohmann::json pose_packet_to_json(const PosePacket& packet);
/// Throws ParseError on a schema violation.
PosePacket pose_packet_from_json(const nlohmann::json& j);

}  // namespace unicon
