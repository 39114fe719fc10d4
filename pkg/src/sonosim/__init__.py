"""sonosim: desk-scale robotic ultrasound session simulator and analysis toolkit.

Subsystems: spatial math, paired-point registration, impedance-controlled
scan simulation, avatar IK behaviors, a phase-aware conversational agent,
event-sourced session orchestration, a framed wire protocol with a console
bridge, ECG-to-HRV processing, and a nonparametric statistics battery.
"""

__version__ = "0.1.0"
