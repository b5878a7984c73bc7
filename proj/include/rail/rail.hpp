// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "rail/audio.hpp"
#include "rail/avatar.hpp"
#include "rail/codec.hpp"
#include "rail/error.hpp"
#include "rail/geometry.hpp"
#include "rail/map.hpp"
#include "rail/mocap.hpp"
#include "rail/presence.hpp"
#include "rail/protocol.hpp"
#include "rail/record.hpp"
#include "rail/scenario.hpp"
#include "rail/sensor_io.hpp"
#include "rail/sensors.hpp"
#include "rail/server.hpp"
#include "rail/traffic.hpp"
#include "rail/types.hpp"
#include "rail/world.hpp"
