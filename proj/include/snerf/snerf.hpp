#pragma once

#include "snerf/autodiff.hpp"
#include "snerf/common.hpp"
#include "snerf/eval.hpp"
#include "snerf/field.hpp"
#include "snerf/geometry.hpp"
#include "snerf/oracle.hpp"
#include "snerf/raster.hpp"
#include "snerf/render.hpp"
#include "snerf/train.hpp"
