#pragma once

#include "fluidanim/error.hpp"
#include "fluidanim/types.hpp"
#include "fluidanim/parallel.hpp"
#include "fluidanim/flow_core.hpp"
#include "fluidanim/splatter.hpp"
#include "fluidanim/pyramid.hpp"
#include "fluidanim/renderer.hpp"
#include "fluidanim/dataset_tools.hpp"
#include "fluidanim/io/flo.hpp"
#include "fluidanim/io/image_io.hpp"
#include "fluidanim/io/animation.hpp"
#include "fluidanim/io/project_io.hpp"
