"""Device runtime: registry, executors, stream/action wire layers."""
from labscan.runtime.bridge import ActionBridge, fetch_device_endpoints
from labscan.runtime.core import (
    DeviceDescriptor,
    DeviceRuntime,
    NotFoundError,
    RegistrationError,
)
from labscan.runtime.discovery import DiscoveryServer
from labscan.runtime.standard import SimBundle, attach_standard_devices
from labscan.runtime.stream import StreamClient, StreamError, StreamServer

__all__ = [
    "ActionBridge",
    "DeviceDescriptor",
    "DeviceRuntime",
    "DiscoveryServer",
    "NotFoundError",
    "RegistrationError",
    "SimBundle",
    "StreamClient",
    "StreamError",
    "StreamServer",
    "attach_standard_devices",
    "fetch_device_endpoints",
]
