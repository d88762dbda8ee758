// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "saenerf/eval.hpp"
#include "saenerf/events.hpp"
#include "saenerf/field.hpp"
#include "saenerf/geometry.hpp"
#include "saenerf/grad.hpp"
#include "saenerf/image.hpp"
#include "saenerf/losses.hpp"
#include "saenerf/parallel.hpp"
#include "saenerf/pipeline.hpp"
#include "saenerf/random.hpp"
#include "saenerf/renderer.hpp"
#include "saenerf/scene.hpp"
#include "saenerf/trainer.hpp"
