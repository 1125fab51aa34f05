#pragma once

// Shared physical constants. Every module reads these so that derived scales
// are bit-identical across the toolkit.

namespace entgrav::constants {

inline constexpr double pi = 3.14159265358979323846;

/// Reduced Planck constant [J s] (CODATA 2018).
inline constexpr double hbar = 1.054571817e-34;

/// Neutron mass [kg].
inline constexpr double neutron_mass = 1.67492749e-27;

/// Newtonian gravitational constant [m^3 kg^-1 s^-2].
inline constexpr double G = 6.67430e-11;

/// Default local gravitational acceleration [m/s^2].
inline constexpr double standard_gravity = 9.81;

/// Free neutron lifetime [s], used by the storage-bound preset.
inline constexpr double neutron_lifetime = 881.5;

/// Default coarse-graining radius of the Diosi-Penrose model [m].
inline constexpr double nucleon_radius = 1e-15;

/// Planck mass over neutron mass.
inline constexpr double planck_to_neutron_mass_ratio = 1.30e19;

/// 1 peV in joules.
inline constexpr double pico_electron_volt = 1.602176634e-31;

}  // namespace entgrav::constants
