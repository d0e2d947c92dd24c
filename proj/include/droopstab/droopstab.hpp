#pragma once

// Umbrella header.  io.hpp is left out because it needs nlohmann/json.

#include "droopstab/grid.hpp"
#include "droopstab/inverter.hpp"
#include "droopstab/dynamics.hpp"
#include "droopstab/equilibrium.hpp"
#include "droopstab/linalg.hpp"
#include "droopstab/linearization.hpp"
#include "droopstab/criteria.hpp"
#include "droopstab/systems.hpp"
#include "droopstab/analysis.hpp"
#include "droopstab/simulator.hpp"
#include "droopstab/sweep.hpp"
