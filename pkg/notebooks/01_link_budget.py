# %% [markdown]
# Link budget for a UAV gateway hovering at 150 m over LoRa end devices.
# Walks from geometry to path loss, SNR, SF feasibility and rate.

# %%
import numpy as np

from uavlora.association import default_comm_range
from uavlora.channel import ChannelParams, a2g_path_loss, achievable_rate, elevation_angle, free_space_loss, snr
from uavlora.lora import SF_VALUES, link_feasible

chan = ChannelParams()
uav = np.array([0.0, 0.0, 150.0])

# %%
# ground offsets from directly below out to 2 km
offsets = np.array([0.0, 150.0, 500.0, 1000.0, 2000.0])
eds = np.column_stack([offsets, np.zeros_like(offsets), np.zeros_like(offsets)])
d = np.linalg.norm(eds - uav, axis=1)
phi = elevation_angle(uav, eds)
loss = a2g_path_loss(d, phi, chan)
for h, dd, p, l in zip(offsets, d, phi, loss):
    print(f"offset {h:6.0f} m  dist {dd:7.1f} m  elev {p:5.1f} deg  FSPL {free_space_loss(dd):6.2f} dB  total {l:6.2f} dB")

# %%
# received SNR at the strongest transmit level, and which SFs can decode it
snr_lin = snr(14.0, 10 ** (-loss / 10), chan.noise_dbm)
snr_db = 10 * np.log10(snr_lin)
for h, s in zip(offsets, snr_db):
    ok = [sf for sf in SF_VALUES if link_feasible(s, sf)]
    print(f"offset {h:6.0f} m  SNR {s:6.1f} dB  feasible SFs {ok}")

# %%
# with no co-SF interference the Shannon rate over 125 kHz is large; interference
# from other EDs on the same SF is what actually limits throughput
print(achievable_rate(snr_lin, chan.bandwidth_hz))
print(achievable_rate(snr_lin / (1 + snr_lin.sum() - snr_lin), chan.bandwidth_hz))

# %%
# the SF12 / 14 dBm link stays feasible far beyond the 1 km service area
print(f"link-budget edge: {default_comm_range(150.0, chan) / 1000:.1f} km")
