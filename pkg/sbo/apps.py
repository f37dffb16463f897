from django.apps import AppConfig


class SboConfig(AppConfig):
    name = 'sbo'
    verbose_name = 'stereotypicality-based obfuscation'
